// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write;

use super::quantile;
use crate::directions::Direction;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::{TokenId, Tokenizer};
use crate::transformer::{RunOptions, Transformer};

/// Projection of every position onto one direction per row.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub tokens: Vec<String>,
    /// `[directions, positions]`.
    pub matrix: Tensor,
    /// Site of each row's direction, as text.
    pub sites: Vec<String>,
    /// 99th percentile of `|activation|`; colors saturate beyond it.
    pub scale: f32,
}

/// Scans token ids; each direction must be one-dimensional.
pub fn scan_tokens(
    model: &Transformer<'_>,
    tokens: &[TokenId],
    labels: Vec<String>,
    directions: &[Direction],
) -> Result<ScanResult> {
    if directions.is_empty() {
        return Err(Error::Analysis("scan needs at least one direction".into()));
    }
    if labels.len() != tokens.len() {
        return Err(Error::Analysis("one label per token required".into()));
    }
    let thetas = directions
        .iter()
        .map(|d| d.vector().map_err(|e| Error::Analysis(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let out = model.run(
        tokens,
        &RunOptions::new()
            .capture(directions.iter().map(|d| d.site))
            .last_logits(),
    )?;
    let n = tokens.len();
    let mut data = Vec::with_capacity(directions.len() * n);
    for (d, theta) in directions.iter().zip(&thetas) {
        let x = out.cache.get(&d.site)?;
        if x.cols() != theta.len() {
            return Err(Error::Analysis(format!(
                "direction width {} does not fit {}",
                theta.len(),
                d.site
            )));
        }
        for i in 0..n {
            data.push(
                x.row(i)
                    .iter()
                    .zip(theta)
                    .map(|(a, b)| (*a as f64) * (*b as f64))
                    .sum::<f64>() as f32,
            );
        }
    }
    let abs: Vec<f32> = data.iter().map(|v| v.abs()).collect();
    Ok(ScanResult {
        tokens: labels,
        matrix: Tensor::new(vec![directions.len(), n], data)?,
        sites: directions.iter().map(|d| d.site.to_string()).collect(),
        scale: quantile(&abs, 0.99)?,
    })
}

/// Tokenizes `text` and scans it.
pub fn scan_projection(
    model: &Transformer<'_>,
    tok: &Tokenizer,
    text: &str,
    directions: &[Direction],
) -> Result<ScanResult> {
    let tokens = tok.encode(text);
    if tokens.is_empty() {
        return Err(Error::Analysis("empty text".into()));
    }
    let labels = tok.decode_each(&tokens)?;
    scan_tokens(model, &tokens, labels, directions)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("\\n<br>"),
            _ => out.push(c),
        }
    }
    out
}

impl ScanResult {
    /// Normalized value in `[-1, 1]`.
    pub fn normalized(&self, row: usize, col: usize) -> f32 {
        let v = self.matrix.row(row)[col];
        if self.scale > 0.0 {
            (v / self.scale).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    /// Background color: red for negative, blue for positive.
    pub fn color(&self, row: usize, col: usize) -> String {
        let a = self.normalized(row, col);
        let fade = (255.0 * (1.0 - a.abs())).round() as u8;
        if a < 0.0 {
            format!("rgb(255,{fade},{fade})")
        } else {
            format!("rgb({fade},{fade},255)")
        }
    }

    /// Static HTML page with one section per row and one span per token.
    pub fn to_html(&self, title: &str) -> String {
        let mut h = String::new();
        let _ = writeln!(
            h,
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>",
            escape(title)
        );
        h.push_str(
            "<style>body{font-family:monospace}span.t{white-space:pre;padding:1px}\
             nav a{margin-right:.5em}</style></head><body>\n",
        );
        let _ = writeln!(h, "<h1>{}</h1>\n<p>scale {:.4}</p>\n<nav>", escape(title), self.scale);
        for (i, s) in self.sites.iter().enumerate() {
            let _ = write!(h, "<a href=\"#row{i}\">{}</a>", escape(s));
        }
        h.push_str("</nav>\n");
        for (i, s) in self.sites.iter().enumerate() {
            let _ = writeln!(h, "<section id=\"row{i}\"><h2>{}</h2><p>", escape(s));
            for (j, t) in self.tokens.iter().enumerate() {
                let _ = write!(
                    h,
                    "<span class=\"t\" style=\"background:{}\" title=\"{:.4}\">{}</span>",
                    self.color(i, j),
                    self.matrix.row(i)[j],
                    escape(t)
                );
            }
            h.push_str("</p></section>\n");
        }
        h.push_str("</body></html>\n");
        h
    }
}
