use std::fmt::Write;
use std::sync::Arc;

use once_cell::sync::Lazy;

use super::Explanation;
use crate::error::Result;
use crate::registry::Registry;

pub trait ReportRenderer: Send + Sync {
    fn name(&self) -> &'static str;
    fn extension(&self) -> &'static str;
    fn render(&self, exp: &Explanation) -> Vec<u8>;
}

pub struct JsonRenderer;

impl ReportRenderer for JsonRenderer {
    fn name(&self) -> &'static str {
        "json"
    }

    fn extension(&self) -> &'static str {
        "json"
    }

    fn render(&self, exp: &Explanation) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(exp).expect("explanation serializes");
        out.push(b'\n');
        out
    }
}

pub struct MarkdownRenderer;

fn md_cell(s: &str) -> String {
    s.replace('\\', "\\\\").replace('|', "\\|").replace('\n', " ")
}

impl ReportRenderer for MarkdownRenderer {
    fn name(&self) -> &'static str {
        "markdown"
    }

    fn extension(&self) -> &'static str {
        "md"
    }

    fn render(&self, exp: &Explanation) -> Vec<u8> {
        let mut s = String::new();
        let _ = writeln!(s, "# Explanation: {}\n", md_cell(&exp.doc_id));
        let probs: Vec<String> = exp.prediction.iter().map(|p| format!("{p:.4}")).collect();
        let _ = writeln!(
            s,
            "Predicted class: **{}** (outputs: {})\n",
            exp.predicted_class,
            probs.join(", ")
        );
        s.push_str("| t | sentence | prototype | prototype text | similarity | sentiment |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for step in &exp.steps {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.4} | {:.4} |",
                step.t,
                md_cell(&step.sentence),
                step.prototype_index,
                md_cell(&step.prototype_text),
                step.similarity,
                step.prototype_sentiment
            );
        }
        s.into_bytes()
    }
}

/// Sentiment-vs-sentence plot: one vertex per sentence, y in [0, 1], with a
/// dashed line at 0.5.
pub struct SvgRenderer;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

impl SvgRenderer {
    fn x(index: usize, len: usize) -> f64 {
        if len <= 1 {
            WIDTH / 2.0
        } else {
            MARGIN + (WIDTH - 2.0 * MARGIN) * index as f64 / (len - 1) as f64
        }
    }

    fn y(score: f64) -> f64 {
        HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * score.clamp(0.0, 1.0)
    }
}

impl ReportRenderer for SvgRenderer {
    fn name(&self) -> &'static str {
        "svg"
    }

    fn extension(&self) -> &'static str {
        "svg"
    }

    fn render(&self, exp: &Explanation) -> Vec<u8> {
        let n = exp.steps.len();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            "<title>{} (predicted class {})</title>",
            xml_escape(&exp.doc_id),
            exp.predicted_class
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let (left, right) = (MARGIN, WIDTH - MARGIN);
        let (top, bottom) = (Self::y(1.0), Self::y(0.0));
        let _ = writeln!(
            s,
            r##"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="#444" stroke-width="1"/>"##
        );
        let mid = Self::y(0.5);
        let _ = writeln!(
            s,
            r##"<line class="reference" x1="{left}" y1="{mid}" x2="{right}" y2="{mid}" stroke="#999" stroke-dasharray="4 3" stroke-width="1"/>"##
        );
        for (label, v) in [("0", 0.0), ("0.5", 0.5), ("1", 1.0)] {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="end" fill="#444">{label}</text>"##,
                left - 6.0,
                Self::y(v) + 4.0
            );
        }
        for (i, step) in exp.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="middle" fill="#444">{}</text>"##,
                Self::x(i, n),
                bottom + 16.0,
                step.t + 1
            );
        }
        if n > 1 {
            let points: Vec<String> = exp
                .steps
                .iter()
                .enumerate()
                .map(|(i, st)| format!("{},{}", Self::x(i, n), Self::y(st.prototype_sentiment)))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline class="trajectory" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
                points.join(" ")
            );
        }
        for (i, st) in exp.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                r##"<circle class="step" cx="{}" cy="{}" r="4" fill="#1f77b4" data-t="{}" data-prototype="{}" data-score="{}"><title>{}: {}</title></circle>"##,
                Self::x(i, n),
                Self::y(st.prototype_sentiment),
                st.t,
                st.prototype_index,
                st.prototype_sentiment,
                st.prototype_index,
                xml_escape(&st.prototype_text)
            );
        }
        s.push_str("</svg>\n");
        s.into_bytes()
    }
}

static REGISTRY: Lazy<Registry<(), dyn ReportRenderer>> = Lazy::new(|| {
    let mut reg: Registry<(), dyn ReportRenderer> = Registry::new("report format");
    reg.register("json", |_: &()| Ok(Arc::new(JsonRenderer) as Arc<dyn ReportRenderer>))
        .expect("fresh registry");
    reg.register("markdown", |_: &()| Ok(Arc::new(MarkdownRenderer) as Arc<dyn ReportRenderer>))
        .expect("fresh registry");
    reg.register("svg", |_: &()| Ok(Arc::new(SvgRenderer) as Arc<dyn ReportRenderer>))
        .expect("fresh registry");
    reg
});

pub fn registry() -> &'static Registry<(), dyn ReportRenderer> {
    &REGISTRY
}

pub fn render_report(exp: &Explanation, format: &str) -> Result<Vec<u8>> {
    Ok(registry().create(format, &())?.render(exp))
}
