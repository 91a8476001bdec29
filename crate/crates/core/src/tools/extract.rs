//! HTML to plain text.

use scraper::node::Node;
use scraper::{ElementRef, Html};

const SKIPPED: &[&str] = &["script", "style", "noscript", "head", "template", "svg", "iframe"];
const BLOCKS: &[&str] = &[
    "p",
    "div",
    "section",
    "article",
    "main",
    "header",
    "footer",
    "nav",
    "aside",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "ul",
    "ol",
    "li",
    "table",
    "tr",
    "blockquote",
    "pre",
    "dl",
    "dt",
    "dd",
    "figure",
    "figcaption",
    "form",
];

/// Extracts readable text from an HTML document.
///
/// Block elements become paragraphs separated by a blank line, `<br>` becomes
/// a newline, and links keep their target as `text (url)` when the URL is not
/// already the link text.
pub fn html_to_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut out = Writer::default();
    walk(doc.root_element(), &mut out);
    out.finish()
}

#[derive(Default)]
struct Writer {
    paragraphs: Vec<String>,
    current: String,
    pending_space: bool,
}

impl Writer {
    fn needs_separator(&self) -> bool {
        !self.current.is_empty() && !self.current.ends_with('\n')
    }

    fn text(&mut self, t: &str) {
        let mut sep = self.pending_space || t.starts_with(char::is_whitespace);
        for word in t.split_whitespace() {
            if sep && self.needs_separator() {
                self.current.push(' ');
            }
            self.current.push_str(word);
            sep = true;
        }
        if !t.trim().is_empty() {
            self.pending_space = false;
        }
        if t.ends_with(char::is_whitespace) {
            self.pending_space = true;
        }
    }

    fn link_target(&mut self, href: &str) {
        let pending = self.pending_space;
        if self.needs_separator() {
            self.current.push(' ');
        }
        self.current.push('(');
        self.current.push_str(href);
        self.current.push(')');
        self.pending_space = pending;
    }

    fn line_break(&mut self) {
        if !self.current.is_empty() {
            self.current.push('\n');
        }
        self.pending_space = false;
    }

    fn paragraph_break(&mut self) {
        let p = self.current.trim().to_string();
        if !p.is_empty() {
            let lines: Vec<&str> = p.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            self.paragraphs.push(lines.join("\n"));
        }
        self.current.clear();
        self.pending_space = false;
    }

    fn finish(mut self) -> String {
        self.paragraph_break();
        self.paragraphs.join("\n\n")
    }
}

fn walk(element: ElementRef<'_>, out: &mut Writer) {
    let name = element.value().name();
    if SKIPPED.contains(&name) {
        return;
    }
    let block = BLOCKS.contains(&name);
    if block {
        out.paragraph_break();
    }
    for child in element.children() {
        match child.value() {
            Node::Text(text) => out.text(text),
            Node::Element(_) => {
                let Some(el) = ElementRef::wrap(child) else { continue };
                match el.value().name() {
                    "br" => out.line_break(),
                    "a" => {
                        let before = out.current.len();
                        walk(el, out);
                        let label = out.current[before..].trim().to_string();
                        if let Some(href) = el.value().attr("href") {
                            let href = href.trim();
                            if (href.starts_with("http://") || href.starts_with("https://")) && label != href {
                                out.link_target(href);
                            }
                        }
                    }
                    _ => walk(el, out),
                }
            }
            _ => {}
        }
    }
    if block {
        out.paragraph_break();
    }
}
