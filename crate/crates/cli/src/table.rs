//! Tables rendered either as aligned text or as strict CSV.

use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub enum Cell {
    Text(String),
    Int(usize),
    /// Proportion; shown as a percent with one decimal in aligned output.
    Prop(f64),
    /// Already a percentage.
    Pct(f64),
    Num(f64),
    Missing,
}

impl Cell {
    pub fn opt_prop(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Prop)
    }

    pub fn opt_pct(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Pct)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Prop(v) | Cell::Pct(v) | Cell::Num(v) => format!("{v}"),
            Cell::Missing => String::new(),
        }
    }

    fn pretty(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Prop(v) => format!("{:.1}", 100.0 * v),
            Cell::Pct(v) => format!("{v:.1}"),
            Cell::Num(v) => format!("{v:.3}"),
            Cell::Missing => "-".into(),
        }
    }

    fn is_text(&self) -> bool {
        matches!(self, Cell::Text(_))
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    /// File stem and heading.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    /// Aligned text; proportions appear as percents.
    pub fn to_pretty(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::pretty).collect()).collect();
        let width: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.columns[j].len()]).max().unwrap_or(0))
            .collect();
        let left: Vec<bool> = (0..self.columns.len())
            .map(|j| self.rows.first().is_none_or(|r| r[j].is_text()))
            .collect();
        let mut out = format!("{}\n", self.name);
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, c)| if left[j] { format!("{c:<w$}", w = width[j]) } else { format!("{c:>w$}", w = width[j]) })
                .collect();
            let _ = writeln!(out, "  {}", parts.join("  ").trim_end());
        };
        line(&mut out, &self.columns);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_both_forms() {
        let mut t = Table::new("demo", &["group", "pi", "n"]);
        t.push(vec![Cell::Text("lqc".into()), Cell::Prop(0.7112), Cell::Int(3)]);
        t.push(vec![Cell::Text("hqc".into()), Cell::Missing, Cell::Int(12)]);
        assert_eq!(t.to_csv(), "group,pi,n\nlqc,0.7112,3\nhqc,,12\n");
        let p = t.to_pretty();
        assert!(p.contains("lqc    71.1   3"), "{p}");
        assert!(p.contains("hqc       -  12"), "{p}");
    }
}
