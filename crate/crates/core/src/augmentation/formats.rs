//! Surface formats for dates and currency amounts.
//!
//! Date patterns are strftime-like:
//!
//! | code | meaning                       | example |
//! |------|-------------------------------|---------|
//! | `%d` | day, two digits               | `09`    |
//! | `%o` | day with ordinal suffix       | `19th`  |
//! | `%m` | month, two digits             | `11`    |
//! | `%b` | month abbreviation            | `Nov`   |
//! | `%B` | month name                    | `November` |
//! | `%y` | year, two digits (50-99 → 19xx) | `90`  |
//! | `%Y` | year, four digits             | `1990`  |
//!
//! Amount patterns contain one placeholder, optionally surrounded by
//! literal text: `{plain}` → `1234.56`, `{grouped}` → `1,234.56`,
//! `{euro}` → `1.234,56`, `{int}` → `1234` (whole units only).
//! `"${grouped}"` and `"{plain} USD"` are both valid patterns.

use serde::{Deserialize, Serialize};

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Date {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        4 | 6 | 9 | 11 => 30,
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        _ => 31,
    }
}

impl Date {
    pub fn new(year: i32, month: u32, day: u32) -> Option<Date> {
        ((1..=12).contains(&month) && day >= 1 && day <= days_in_month(year, month))
            .then_some(Date { year, month, day })
    }

    pub fn format(&self, pattern: &str) -> String {
        let mut out = String::new();
        let mut chars = pattern.chars();
        while let Some(c) = chars.next() {
            if c != '%' {
                out.push(c);
                continue;
            }
            match chars.next() {
                Some('d') => out.push_str(&format!("{:02}", self.day)),
                Some('o') => out.push_str(&ordinal(self.day)),
                Some('m') => out.push_str(&format!("{:02}", self.month)),
                Some('b') => out.push_str(&MONTHS[self.month as usize - 1][..3]),
                Some('B') => out.push_str(MONTHS[self.month as usize - 1]),
                Some('y') => out.push_str(&format!("{:02}", self.year.rem_euclid(100))),
                Some('Y') => out.push_str(&format!("{:04}", self.year)),
                Some(other) => {
                    out.push('%');
                    out.push(other);
                }
                None => out.push('%'),
            }
        }
        out
    }

    /// Parse `text` against `pattern`; the whole string must match.
    pub fn parse(text: &str, pattern: &str) -> Option<Date> {
        let mut rest = text;
        let (mut year, mut month, mut day) = (None, None, None);
        let mut chars = pattern.chars().peekable();
        while let Some(c) = chars.next() {
            if c != '%' {
                rest = rest.strip_prefix(c)?;
                continue;
            }
            match chars.next()? {
                'd' => {
                    let (v, r) = take_digits(rest, 2, 2)?;
                    day = Some(v);
                    rest = r;
                }
                'o' => {
                    let (v, r) = take_digits(rest, 1, 2)?;
                    let suffix = &ordinal(v)[v.to_string().len()..];
                    rest = r.strip_prefix(suffix)?;
                    day = Some(v);
                }
                'm' => {
                    let (v, r) = take_digits(rest, 2, 2)?;
                    month = Some(v);
                    rest = r;
                }
                'b' => {
                    let idx = MONTHS.iter().position(|m| rest.starts_with(&m[..3]))?;
                    month = Some(idx as u32 + 1);
                    rest = &rest[3..];
                }
                'B' => {
                    let idx = MONTHS.iter().position(|m| rest.starts_with(m))?;
                    rest = &rest[MONTHS[idx].len()..];
                    month = Some(idx as u32 + 1);
                }
                'y' => {
                    let (v, r) = take_digits(rest, 2, 2)?;
                    year = Some(if v >= 50 { 1900 + v as i32 } else { 2000 + v as i32 });
                    rest = r;
                }
                'Y' => {
                    let (v, r) = take_digits(rest, 4, 4)?;
                    year = Some(v as i32);
                    rest = r;
                }
                _ => return None,
            }
        }
        if !rest.is_empty() {
            return None;
        }
        Date::new(year?, month?, day?)
    }
}

fn take_digits(s: &str, min: usize, max: usize) -> Option<(u32, &str)> {
    let n = s.bytes().take(max).take_while(u8::is_ascii_digit).count();
    if n < min {
        return None;
    }
    Some((s[..n].parse().ok()?, &s[n..]))
}

fn ordinal(day: u32) -> String {
    let suffix = match (day % 10, day % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{day}{suffix}")
}

/// Common date patterns tried when a rule's own templates do not parse.
pub const COMMON_DATE_PATTERNS: [&str; 10] = [
    "%m/%d/%y", "%m-%d-%y", "%m/%d/%Y", "%d.%m.%Y", "%Y-%m-%d", "%b %d, %Y", "%d %b %Y",
    "%o %b, %y", "%B %d, %Y", "%d/%m/%Y",
];

/// A currency amount in minor units (cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Amount(pub i64);

fn group(int_part: i64, sep: char) -> String {
    let digits = int_part.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(sep);
        }
        out.push(ch);
    }
    out
}

const PLACEHOLDERS: [&str; 4] = ["{plain}", "{grouped}", "{euro}", "{int}"];

fn split_pattern(pattern: &str) -> Option<(&str, &'static str, &str)> {
    PLACEHOLDERS.iter().find_map(|ph| {
        pattern
            .find(ph)
            .map(|at| (&pattern[..at], *ph, &pattern[at + ph.len()..]))
    })
}

impl Amount {
    pub fn format(&self, pattern: &str) -> String {
        let Some((pre, ph, post)) = split_pattern(pattern) else {
            return pattern.to_string();
        };
        let units = self.0 / 100;
        let cents = self.0 % 100;
        let body = match ph {
            "{plain}" => format!("{units}.{cents:02}"),
            "{grouped}" => format!("{}.{cents:02}", group(units, ',')),
            "{euro}" => format!("{},{cents:02}", group(units, '.')),
            _ => format!("{units}"),
        };
        format!("{pre}{body}{post}")
    }

    pub fn parse(text: &str, pattern: &str) -> Option<Amount> {
        let (pre, ph, post) = split_pattern(pattern)?;
        let body = text.strip_prefix(pre)?.strip_suffix(post)?;
        let (int_sep, dec_sep) = match ph {
            "{plain}" => (None, Some('.')),
            "{grouped}" => (Some(','), Some('.')),
            "{euro}" => (Some('.'), Some(',')),
            _ => (None, None),
        };
        let (int_text, frac_text) = match dec_sep {
            Some(sep) => body.rsplit_once(sep)?,
            None => (body, "00"),
        };
        if frac_text.len() != 2 || !frac_text.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let int_digits: String = match int_sep {
            Some(sep) => {
                let groups: Vec<&str> = int_text.split(sep).collect();
                let ok = groups.iter().enumerate().all(|(i, g)| {
                    !g.is_empty()
                        && g.bytes().all(|b| b.is_ascii_digit())
                        && (i == 0 && g.len() <= 3 || g.len() == 3)
                });
                if !ok {
                    return None;
                }
                groups.concat()
            }
            None => int_text.to_string(),
        };
        if int_digits.is_empty() || !int_digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let units: i64 = int_digits.parse().ok()?;
        let cents: i64 = frac_text.parse().ok()?;
        Some(Amount(units * 100 + cents))
    }
}

pub const COMMON_AMOUNT_PATTERNS: [&str; 6] =
    ["{plain}", "{grouped}", "${grouped}", "${plain}", "{euro}", "{plain} USD"];

/// The kind of value a format rule rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Date,
    Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Date(Date),
    Amount(Amount),
}

impl Value {
    pub fn format(&self, pattern: &str) -> String {
        match self {
            Value::Date(d) => d.format(pattern),
            Value::Amount(a) => a.format(pattern),
        }
    }
}

/// Parse a surface string as `kind`, trying `patterns` then the common lists.
pub fn parse_value(text: &str, kind: ValueKind, patterns: &[String]) -> Option<Value> {
    match kind {
        ValueKind::Date => patterns
            .iter()
            .map(String::as_str)
            .chain(COMMON_DATE_PATTERNS)
            .find_map(|p| Date::parse(text, p))
            .map(Value::Date),
        ValueKind::Amount => patterns
            .iter()
            .map(String::as_str)
            .chain(COMMON_AMOUNT_PATTERNS)
            .find_map(|p| Amount::parse(text, p))
            .map(Value::Amount),
    }
}
