//! Minimal RFC-4180-style CSV writing: header row, comma separator, '.'
//! decimal (Rust float formatting is locale-independent), quoting only where
//! the content demands it. Floats print in shortest round-trip form, so the
//! full double precision survives a parse back.

use std::fs;
use std::io;
use std::path::Path;

pub struct Csv {
    buf: String,
    columns: usize,
}

fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut csv = Csv { buf: String::new(), columns: header.len() };
        csv.push_line(header.iter().map(|h| h.to_string()));
        csv
    }

    fn push_line(&mut self, fields: impl Iterator<Item = String>) {
        let mut n = 0;
        for (k, field) in fields.enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(&escape(&field));
            n += 1;
        }
        assert_eq!(n, self.columns, "CSV row width mismatch");
        self.buf.push('\n');
    }

    pub fn row(&mut self, fields: &[String]) {
        self.push_line(fields.iter().cloned());
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.buf)
    }
}

/// Shortest representation that parses back to exactly the same f64.
pub fn float(v: f64) -> String {
    format!("{v}")
}
