//! HTML adapter: turns an anchored regulation page into marked plaintext.
//!
//! Any element carrying an `id` (or an `<a name>`) that parses as a section
//! id opens a section. Inline anchors (`<a>`, `<span>`) stand for their
//! enclosing block. The block's text, minus the text of nested anchored
//! blocks, becomes the section body. Headings become title-only sections.

use std::collections::HashSet;

use scraper::{ElementRef, Html, Node};

use crate::section_id::{Depth, SectionId};

use super::MARKER;

const INLINE: [&str; 4] = ["a", "span", "strong", "em"];
const HEADINGS: [&str; 6] = ["h1", "h2", "h3", "h4", "h5", "h6"];

pub fn html_to_marked_text(raw: &str, depth: Depth) -> String {
    let document = Html::parse_document(raw);
    let mut anchors: Vec<(SectionId, ElementRef)> = Vec::new();
    let mut seen: HashSet<SectionId> = HashSet::new();

    for element in document
        .root_element()
        .descendants()
        .filter_map(ElementRef::wrap)
    {
        let name = element.value().name();
        let mut candidate = element
            .value()
            .attr("id")
            .or_else(|| {
                (name == "a")
                    .then(|| element.value().attr("name"))
                    .flatten()
            })
            .and_then(|v| SectionId::parse_with(v, depth).ok());
        if candidate.is_none() && HEADINGS.contains(&name) {
            candidate =
                leading_id(&collapse(&element.text().collect::<String>()), depth).map(|(id, _)| id);
        }
        let Some(id) = candidate else { continue };
        if !seen.insert(id.clone()) {
            continue;
        }
        let container = if INLINE.contains(&name) {
            element
                .parent()
                .and_then(ElementRef::wrap)
                .unwrap_or(element)
        } else {
            element
        };
        anchors.push((id, container));
    }

    let containers: HashSet<_> = anchors.iter().map(|(_, c)| c.id()).collect();
    let mut out = String::new();
    for (id, container) in &anchors {
        let text = own_text(*container, &containers);
        out.push_str(MARKER);
        out.push(' ');
        out.push_str(id.canonical_text());
        if HEADINGS.contains(&container.value().name()) {
            let title = match leading_id(&text, depth) {
                Some((_, rest)) => rest,
                None => text.clone(),
            };
            if !title.is_empty() {
                out.push_str(" | ");
                out.push_str(&title);
            }
            out.push('\n');
        } else {
            out.push('\n');
            if !text.is_empty() {
                out.push_str(&text);
                out.push('\n');
            }
        }
    }
    out
}

/// Text inside `container`, skipping nested anchored blocks and scripts.
fn own_text(container: ElementRef, containers: &HashSet<ego_tree::NodeId>) -> String {
    let mut buf = String::new();
    for node in container.descendants() {
        let Node::Text(text) = node.value() else {
            continue;
        };
        let mut skip = false;
        for ancestor in node.ancestors() {
            if ancestor.id() == container.id() {
                break;
            }
            if containers.contains(&ancestor.id()) {
                skip = true;
                break;
            }
            if let Node::Element(e) = ancestor.value() {
                if matches!(e.name(), "script" | "style") {
                    skip = true;
                    break;
                }
            }
        }
        if !skip {
            buf.push_str(text);
            buf.push(' ');
        }
    }
    collapse(&buf)
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits `"1926.451 - General requirements."` into id and remainder.
fn leading_id(text: &str, depth: Depth) -> Option<(SectionId, String)> {
    let text = text.trim_start_matches('§').trim_start();
    let end = text.find(char::is_whitespace).unwrap_or(text.len());
    let id = SectionId::parse_with(&text[..end], depth).ok()?;
    let rest = text[end..]
        .trim_start()
        .trim_start_matches(['-', '–', '—', ':'])
        .trim()
        .to_string();
    Some((id, rest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_sections, ExtractOptions, SourceFormat};

    const PAGE: &str = r#"<!DOCTYPE html>
<html><head><title>1926.451 | OSHA</title><script>var x = "1926.999";</script></head>
<body>
<div class="region-header">Regulations (Standards - 29 CFR)</div>
<h1 id="1926.451">1926.451 - General requirements.</h1>
<div class="paragraph"><a name="1926.451(a)"></a>(a) <strong>Capacity</strong> -
  <div class="paragraph"><a name="1926.451(a)(1)"></a>(a)(1) Each scaffold and scaffold component
    shall be capable of supporting, without failure, its own weight.</div>
</div>
<div class="paragraph"><a name="1926.451(b)"></a>(b) Scaffold platform construction.
  <div class="paragraph"><a name="1926.451(b)(2)"></a>(b)(2) Except as provided in paragraphs
    (b)(2)(i) and (b)(2)(ii) of this section, each scaffold platform shall be at least 18 inches wide.
    <p id="1926.451(b)(2)(i)">(b)(2)(i) Each ladder jack scaffold shall be at least 12 inches wide.</p>
  </div>
</div>
<div class="footer">Contact us</div>
</body></html>"#;

    #[test]
    fn osha_like_page() {
        let nodes = extract_sections(PAGE, SourceFormat::Html, &ExtractOptions::default()).unwrap();
        let ids: Vec<_> = nodes.iter().map(|n| n.id.to_string()).collect();
        assert_eq!(
            ids,
            [
                "1926.451",
                "1926.451(a)",
                "1926.451(a)(1)",
                "1926.451(b)",
                "1926.451(b)(2)",
                "1926.451(b)(2)(i)"
            ]
        );
        assert_eq!(nodes[0].title.as_deref(), Some("General requirements."));
        assert!(nodes[0].body.is_empty());
        assert_eq!(nodes[1].body, "(a) Capacity -");
        assert_eq!(
            nodes[2].body,
            "(a)(1) Each scaffold and scaffold component shall be capable of supporting, without failure, its own weight."
        );
        assert!(nodes[4].body.ends_with("at least 18 inches wide."));
        assert!(!nodes[4].body.contains("ladder jack"));
        assert_eq!(
            nodes[5].body,
            "(b)(2)(i) Each ladder jack scaffold shall be at least 12 inches wide."
        );
    }

    #[test]
    fn heading_without_id_attribute() {
        let page = "<html><body><h2>1926.652 - Requirements for protective systems.</h2>\
                    <p id=\"1926.652(a)\">(a) Protection of employees.</p></body></html>";
        let text = html_to_marked_text(page, Depth::Strict);
        assert_eq!(
            text,
            "@@ 1926.652 | Requirements for protective systems.\n@@ 1926.652(a)\n(a) Protection of employees.\n"
        );
    }

    #[test]
    fn page_without_anchors() {
        let text = html_to_marked_text(
            "<html><body><p>nothing here</p></body></html>",
            Depth::Strict,
        );
        assert!(text.is_empty());
    }
}
