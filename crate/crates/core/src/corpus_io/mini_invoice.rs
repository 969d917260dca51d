//! Synthetic invoices with exact gold spans.
//!
//! A corpus is drawn from `vendor_templates` layouts. A template fixes the
//! block positions, label phrasings, date and money formats and which
//! distractor fields (due date, subtotal, tax) appear; each document fills
//! it with fresh values, a random number of line items and a small
//! per-block position jitter.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, Provenance};
use crate::augmentation::formats::{Amount, Date};
use crate::doc_model::{reading_order, BBox, Document, EntitySchema, EntitySpan, Token};
use crate::error::{NatError, Result};
use crate::rng::{substream, Rng};

pub const MINI_INVOICE_ENTITIES: [&str; 6] = [
    "vendor_name",
    "invoice_number",
    "purchase_date",
    "item_description",
    "item_amount",
    "total_billed_amount",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniInvoiceConfig {
    pub n_documents: usize,
    /// Entity types to annotate; other fields are emitted as plain tokens.
    pub entity_types: Vec<String>,
    pub vendor_templates: usize,
    pub page_width: f64,
    pub page_height: f64,
    /// Per-block position jitter, as a fraction of the page.
    pub jitter: f64,
    pub max_line_items: usize,
    /// Probability that a template carries each distractor field.
    pub distractor_rate: f64,
    /// Number of vendor-name words drawn from; smaller means more repeats.
    pub vendor_vocabulary: usize,
    pub id_prefix: String,
}

impl Default for MiniInvoiceConfig {
    fn default() -> Self {
        MiniInvoiceConfig {
            n_documents: 100,
            entity_types: MINI_INVOICE_ENTITIES.iter().map(|s| s.to_string()).collect(),
            vendor_templates: 5,
            page_width: 850.0,
            page_height: 1100.0,
            jitter: 0.02,
            max_line_items: 5,
            distractor_rate: 0.6,
            vendor_vocabulary: VENDOR_WORDS.len(),
            id_prefix: "inv".into(),
        }
    }
}

impl MiniInvoiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vendor_templates == 0 {
            return Err(NatError::Config("vendor_templates must be at least 1".into()));
        }
        if self.max_line_items == 0 {
            return Err(NatError::Config("max_line_items must be at least 1".into()));
        }
        if !(self.page_width > 0.0 && self.page_height > 0.0) {
            return Err(NatError::Config("page size must be positive".into()));
        }
        if !(0.0..=0.1).contains(&self.jitter) {
            return Err(NatError::Config("jitter must be in [0, 0.1]".into()));
        }
        for e in &self.entity_types {
            if !MINI_INVOICE_ENTITIES.contains(&e.as_str()) {
                return Err(NatError::Config(format!("unknown mini-invoice entity `{e}`")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<EntitySchema> {
        EntitySchema::new("invoice", self.entity_types.clone())
    }
}

const VENDOR_WORDS: [&str; 48] = [
    "Acme", "Blue", "Ridge", "Summit", "Harbor", "Northwind", "Cedar", "Granite", "Pioneer",
    "Silver", "Maple", "Orion", "Atlas", "Crescent", "Falcon", "Golden", "Prairie", "Redwood",
    "Sterling", "Union", "Vertex", "Willow", "Beacon", "Coastal", "Delta", "Evergreen", "Frontier",
    "Highland", "Iron", "Juniper", "Keystone", "Lakeside", "Meridian", "Nova", "Oakmont", "Pinnacle",
    "Quarry", "Riverside", "Sage", "Timber", "Valley", "Westfield", "Apex", "Bright", "Copper",
    "Dune", "Ember", "Fjord",
];
const VENDOR_SUFFIXES: [&str; 8] = ["Supply", "Trading", "Foods", "Electric", "Works", "Logistics", "Labs", "Market"];
const VENDOR_FORMS: [&str; 5] = ["Inc", "LLC", "Co", "Ltd", "Corp"];
const STREETS: [&str; 10] = ["Main", "Oak", "Pine", "Elm", "Lake", "Hill", "Park", "Mill", "Bay", "King"];
const STREET_KINDS: [&str; 4] = ["St", "Ave", "Rd", "Blvd"];
const CITIES: [&str; 8] = ["Springfield", "Riverton", "Fairview", "Georgetown", "Salem", "Madison", "Clinton", "Ashland"];
const ITEMS: [&str; 30] = [
    "Paper", "Toner", "Cable", "Bolts", "Widget", "Gasket", "Filter", "Battery", "Lamp", "Valve",
    "Sensor", "Bracket", "Hinge", "Pump", "Hose", "Gloves", "Tape", "Labels", "Switch", "Fuse",
    "Motor", "Chair", "Desk", "Monitor", "Keyboard", "Router", "Adapter", "Cleaner", "Paint", "Brush",
];
const ITEM_QUALIFIERS: [&str; 10] = ["Large", "Small", "Steel", "Blue", "Premium", "Basic", "Heavy", "Mini", "Pro", "Set"];

const INVOICE_LABELS: [&str; 5] = ["Invoice No", "Invoice #", "Inv. No", "Invoice Number", "Bill No"];
const DATE_LABELS: [&str; 4] = ["Date", "Invoice Date", "Purchase Date", "Dated"];
const TOTAL_LABELS: [&str; 5] = ["Total", "Amount Due", "Total Amount", "Grand Total", "Balance Due"];
const DESC_HEADERS: [&str; 3] = ["Description", "Item", "Product"];
const AMOUNT_HEADERS: [&str; 3] = ["Amount", "Price", "Line Total"];
const DATE_FORMATS: [&str; 5] = ["%m/%d/%y", "%d.%m.%Y", "%b %d, %Y", "%Y-%m-%d", "%m-%d-%y"];
const MONEY_FORMATS: [&str; 4] = ["{plain}", "{grouped}", "${grouped}", "{euro}"];

const CHAR_W: f64 = 0.0085;
const SPACE_W: f64 = 0.006;
const LINE_H: f64 = 0.013;
const ROW_GAP: f64 = 0.03;

#[derive(Debug, Clone)]
struct Template {
    vendor_x: f64,
    vendor_y: f64,
    vendor_scale: f64,
    meta_x: f64,
    meta_y: f64,
    value_below: bool,
    invoice_label: &'static str,
    date_label: &'static str,
    due_date: bool,
    date_format: &'static str,
    money_format: &'static str,
    table_y: f64,
    desc_x: f64,
    qty_x: f64,
    amount_x: f64,
    desc_header: &'static str,
    amount_header: &'static str,
    subtotal: bool,
    tax: bool,
    total_label: &'static str,
    invoice_prefix: &'static str,
}

impl Template {
    fn draw(rng: &mut Rng, distractor_rate: f64) -> Template {
        let vendor_right = rng.gen_bool(0.4);
        Template {
            vendor_x: if vendor_right { rng.gen_range(0.45..0.5) } else { rng.gen_range(0.05..0.15) },
            vendor_y: rng.gen_range(0.04..0.08),
            vendor_scale: rng.gen_range(1.2..1.6),
            meta_x: if vendor_right { rng.gen_range(0.05..0.15) } else { rng.gen_range(0.55..0.62) },
            meta_y: rng.gen_range(0.18..0.26),
            value_below: rng.gen_bool(0.3),
            invoice_label: INVOICE_LABELS.choose(rng).unwrap(),
            date_label: DATE_LABELS.choose(rng).unwrap(),
            due_date: rng.gen_bool(distractor_rate),
            date_format: DATE_FORMATS.choose(rng).unwrap(),
            money_format: MONEY_FORMATS.choose(rng).unwrap(),
            table_y: rng.gen_range(0.36..0.44),
            desc_x: rng.gen_range(0.06..0.12),
            qty_x: rng.gen_range(0.5..0.58),
            amount_x: rng.gen_range(0.7..0.78),
            desc_header: DESC_HEADERS.choose(rng).unwrap(),
            amount_header: AMOUNT_HEADERS.choose(rng).unwrap(),
            subtotal: rng.gen_bool(distractor_rate),
            tax: rng.gen_bool(distractor_rate),
            total_label: TOTAL_LABELS.choose(rng).unwrap(),
            invoice_prefix: ["INV-", "", "No.", "A"].choose(rng).unwrap(),
        }
    }
}

struct Builder {
    words: Vec<(String, BBox, Option<(&'static str, usize)>)>,
    next_span: usize,
}

impl Builder {
    /// Lay out `text` as words on one line starting at `(x, y)`; returns the
    /// x coordinate after the last word.
    fn line(&mut self, text: &str, x: f64, y: f64, scale: f64, entity: Option<&'static str>) -> f64 {
        let span = entity.map(|e| {
            self.next_span += 1;
            (e, self.next_span)
        });
        let h = LINE_H * scale;
        let mut cursor = x;
        for word in text.split_whitespace() {
            let w = CHAR_W * scale * word.chars().count() as f64;
            let x1 = (cursor + w).min(0.995);
            let bbox = BBox::new(cursor.min(x1), y.clamp(0.0, 1.0 - h), x1, (y + h).min(1.0));
            self.words.push((word.to_string(), bbox, span));
            cursor += w + SPACE_W * scale;
        }
        cursor
    }
}

fn vendor_name(rng: &mut Rng, vocab: usize) -> String {
    let vocab = vocab.clamp(2, VENDOR_WORDS.len());
    let mut parts = vec![VENDOR_WORDS[rng.gen_range(0..vocab)]];
    if rng.gen_bool(0.5) {
        parts.push(VENDOR_WORDS[rng.gen_range(0..vocab)]);
    }
    parts.push(VENDOR_SUFFIXES.choose(rng).unwrap());
    if rng.gen_bool(0.6) {
        parts.push(VENDOR_FORMS.choose(rng).unwrap());
    }
    parts.join(" ")
}

fn random_date(rng: &mut Rng) -> Date {
    let year = rng.gen_range(1988..2024);
    let month = rng.gen_range(1..=12);
    Date::new(year, month, rng.gen_range(1..=28)).unwrap()
}

fn generate_one(cfg: &MiniInvoiceConfig, template: &Template, rng: &mut Rng, id: String) -> Document {
    let enabled = |e: &'static str| cfg.entity_types.iter().any(|t| t == e).then_some(e);
    let mut b = Builder {
        words: Vec::new(),
        next_span: 0,
    };
    let jit = |rng: &mut Rng| {
        if cfg.jitter > 0.0 {
            rng.gen_range(-cfg.jitter..cfg.jitter)
        } else {
            0.0
        }
    };

    // vendor block
    let (vx, vy) = (template.vendor_x + jit(rng), template.vendor_y + jit(rng));
    b.line(&vendor_name(rng, cfg.vendor_vocabulary), vx, vy, template.vendor_scale, enabled("vendor_name"));
    let street = format!(
        "{} {} {}",
        rng.gen_range(10..9999),
        STREETS.choose(rng).unwrap(),
        STREET_KINDS.choose(rng).unwrap()
    );
    let addr_y = vy + LINE_H * template.vendor_scale + 0.012;
    b.line(&street, vx, addr_y, 1.0, None);
    let city = format!("{} {:05}", CITIES.choose(rng).unwrap(), rng.gen_range(10000..99999));
    b.line(&city, vx, addr_y + ROW_GAP * 0.7, 1.0, None);

    // invoice number, date, optional due date
    let (mx, my) = (template.meta_x + jit(rng), template.meta_y + jit(rng));
    let invoice_no = format!("{}{}", template.invoice_prefix, rng.gen_range(1000..999999));
    let purchase = random_date(rng);
    let mut meta: Vec<(&str, String, Option<&'static str>)> = vec![
        (template.invoice_label, invoice_no, enabled("invoice_number")),
        (template.date_label, purchase.format(template.date_format), enabled("purchase_date")),
    ];
    if template.due_date {
        let due = random_date(rng);
        let row = ("Due Date", due.format(template.date_format), None);
        if rng.gen_bool(0.5) {
            meta.push(row);
        } else {
            meta.insert(1, row);
        }
    }
    let mut y = my;
    for (label, value, entity) in meta {
        let end = b.line(label, mx, y, 1.0, None);
        if template.value_below {
            b.line(&value, mx, y + LINE_H + 0.004, 1.0, entity);
            y += ROW_GAP * 1.5;
        } else {
            b.line(&value, end.max(mx + 0.15) + 0.01, y, 1.0, entity);
            y += ROW_GAP;
        }
    }

    // line items
    let ty = template.table_y.max(y + ROW_GAP) + jit(rng);
    b.line(template.desc_header, template.desc_x, ty, 1.0, None);
    b.line("Qty", template.qty_x, ty, 1.0, None);
    b.line(template.amount_header, template.amount_x, ty, 1.0, None);
    let n_items = rng.gen_range(1..=cfg.max_line_items);
    let mut sum = 0i64;
    let mut ry = ty + ROW_GAP;
    for _ in 0..n_items {
        let mut desc = vec![*ITEMS.choose(rng).unwrap()];
        if rng.gen_bool(0.5) {
            desc.insert(0, ITEM_QUALIFIERS.choose(rng).unwrap());
        }
        if rng.gen_bool(0.2) {
            desc.push(ITEMS.choose(rng).unwrap());
        }
        let amount = Amount(rng.gen_range(150..250_000));
        sum += amount.0;
        b.line(&desc.join(" "), template.desc_x, ry, 1.0, enabled("item_description"));
        b.line(&rng.gen_range(1..20).to_string(), template.qty_x, ry, 1.0, None);
        b.line(&amount.format(template.money_format), template.amount_x, ry, 1.0, enabled("item_amount"));
        ry += ROW_GAP;
    }

    // totals
    ry += ROW_GAP * 0.5;
    let label_x = template.qty_x - 0.12;
    let mut total = sum;
    if template.subtotal {
        b.line("Subtotal", label_x, ry, 1.0, None);
        b.line(&Amount(sum).format(template.money_format), template.amount_x, ry, 1.0, None);
        ry += ROW_GAP;
    }
    if template.tax {
        let tax = sum * rng.gen_range(5..20) / 100;
        total += tax;
        b.line("Tax", label_x, ry, 1.0, None);
        b.line(&Amount(tax).format(template.money_format), template.amount_x, ry, 1.0, None);
        ry += ROW_GAP;
    }
    b.line(template.total_label, label_x, ry, 1.0, None);
    b.line(&Amount(total).format(template.money_format), template.amount_x, ry, 1.0, enabled("total_billed_amount"));
    b.line("Thank you for your business", template.desc_x, (ry + 0.08).min(0.95), 0.9, None);

    // serialize in reading order and recover contiguous spans
    let boxes: Vec<BBox> = b.words.iter().map(|w| w.1).collect();
    let order = reading_order(&boxes);
    let mut tokens = Vec::with_capacity(order.len());
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut last: Option<usize> = None;
    for (pos, &i) in order.iter().enumerate() {
        let (text, bbox, span) = &b.words[i];
        tokens.push(Token::new(text.clone(), *bbox));
        match span {
            Some((_, sid)) if last == Some(*sid) => spans.last_mut().unwrap().end = pos + 1,
            Some((entity, sid)) => {
                spans.push(EntitySpan::new(*entity, pos, pos + 1));
                last = Some(*sid);
            }
            None => last = None,
        }
    }
    Document::new(id, cfg.page_width, cfg.page_height, tokens).with_spans(spans)
}

/// Deterministic given `(config, seed)`.
pub fn generate_mini_invoices(config: &MiniInvoiceConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let templates: Vec<Template> = (0..config.vendor_templates)
        .map(|t| Template::draw(&mut substream(seed, &format!("mini-invoice/template{t}")), config.distractor_rate))
        .collect();
    let documents = (0..config.n_documents)
        .map(|i| {
            let mut rng = substream(seed, &format!("mini-invoice/doc{i}"));
            let template = &templates[i % templates.len()];
            generate_one(config, template, &mut rng, format!("{}-{i:05}", config.id_prefix))
        })
        .collect();
    Ok(Corpus::new(config.schema()?, Provenance::Human).with_documents(documents))
}
