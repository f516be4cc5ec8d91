//! Markup stripping for HTML and Markdown sources.

use std::sync::OnceLock;

use regex::Regex;

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "caption", "dd", "div", "dl", "dt",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header", "hr",
    "li", "main", "nav", "ol", "p", "pre", "section", "table", "tbody", "thead", "tfoot", "title",
    "tr", "ul",
];

const CELL_TAGS: &[&str] = &["td", "th"];

const DROPPED_TAGS: &[&str] = &["script", "style", "noscript", "template"];

/// Removes tags, drops script/style bodies, turns block elements into line
/// breaks and decodes the common character entities.
pub fn strip_html(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    let mut rest = input;
    while let Some(lt) = rest.find('<') {
        out.push_str(&rest[..lt]);
        let tail = &rest[lt..];
        if let Some(body) = tail.strip_prefix("<!--") {
            rest = match body.find("-->") {
                Some(end) => &body[end + 3..],
                None => "",
            };
            continue;
        }
        let Some(gt) = tail.find('>') else {
            // Unterminated '<' is literal text.
            out.push_str(tail);
            rest = "";
            break;
        };
        let inner = &tail[1..gt];
        rest = &tail[gt + 1..];
        let closing = inner.starts_with('/');
        let name: String = inner
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if name.is_empty() {
            // "<!DOCTYPE ...>", "<?xml ...?>" and friends.
            continue;
        }
        if !closing && DROPPED_TAGS.contains(&name.as_str()) && !inner.ends_with('/') {
            rest = skip_element_body(rest, &name);
            continue;
        }
        if BLOCK_TAGS.contains(&name.as_str()) {
            out.push('\n');
        } else if CELL_TAGS.contains(&name.as_str()) {
            out.push(' ');
        }
    }
    out.push_str(rest);
    normalize_lines(&decode_entities(&out))
}

fn skip_element_body<'a>(rest: &'a str, name: &str) -> &'a str {
    let lower = rest.to_ascii_lowercase();
    let needle = format!("</{name}");
    match lower.find(&needle) {
        Some(pos) => match rest[pos..].find('>') {
            Some(gt) => &rest[pos + gt + 1..],
            None => "",
        },
        None => "",
    }
}

pub fn decode_entities(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail
            .find(';')
            .filter(|&semi| semi <= 10)
            .and_then(|semi| decode_entity(&tail[1..semi]).map(|c| (c, semi)));
        match decoded {
            Some((c, semi)) => {
                out.push(c);
                rest = &tail[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(name: &str) -> Option<char> {
    match name {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" => Some(' '),
        "mdash" => Some('\u{2014}'),
        "ndash" => Some('\u{2013}'),
        "hellip" => Some('\u{2026}'),
        "rsquo" => Some('\u{2019}'),
        "lsquo" => Some('\u{2018}'),
        "rdquo" => Some('\u{201d}'),
        "ldquo" => Some('\u{201c}'),
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

/// Collapses horizontal whitespace inside each line, trims lines and drops
/// blank ones.
pub fn normalize_lines(text: &str) -> String {
    text.lines()
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

struct MarkdownRules {
    fence: Regex,
    heading: Regex,
    quote: Regex,
    list: Regex,
    rule: Regex,
    image: Regex,
    link: Regex,
    strong: Regex,
    strong_underscore: Regex,
    emphasis: Regex,
    emphasis_underscore: Regex,
    code: Regex,
}

fn markdown_rules() -> &'static MarkdownRules {
    static RULES: OnceLock<MarkdownRules> = OnceLock::new();
    RULES.get_or_init(|| MarkdownRules {
        fence: Regex::new(r"^\s*(```|~~~)").unwrap(),
        heading: Regex::new(r"^\s{0,3}#{1,6}\s+").unwrap(),
        quote: Regex::new(r"^\s*(>\s?)+").unwrap(),
        list: Regex::new(r"^\s*([-*+]|\d+[.)])\s+").unwrap(),
        rule: Regex::new(r"^\s*([-*_]\s*){3,}$").unwrap(),
        image: Regex::new(r"!\[([^\]]*)\]\([^)]*\)").unwrap(),
        link: Regex::new(r"\[([^\]]*)\]\([^)]*\)").unwrap(),
        strong: Regex::new(r"\*\*([^*]+)\*\*").unwrap(),
        strong_underscore: Regex::new(r"__([^_]+)__").unwrap(),
        emphasis: Regex::new(r"\*([^*\s][^*]*)\*").unwrap(),
        emphasis_underscore: Regex::new(r"(^|[^\w])_([^_\s][^_]*)_([^\w]|$)").unwrap(),
        code: Regex::new(r"`([^`]*)`").unwrap(),
    })
}

pub fn strip_markdown(input: &str) -> String {
    let rules = markdown_rules();
    let mut lines = Vec::new();
    let mut in_fence = false;
    for raw in input.lines() {
        if rules.fence.is_match(raw) {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            lines.push(raw.to_string());
            continue;
        }
        if rules.rule.is_match(raw) {
            lines.push(String::new());
            continue;
        }
        let line = rules.heading.replace(raw, "");
        let line = rules.quote.replace(&line, "");
        let line = rules.list.replace(&line, "");
        let line = rules.image.replace_all(&line, "$1");
        let line = rules.link.replace_all(&line, "$1");
        let line = rules.strong.replace_all(&line, "$1");
        let line = rules.strong_underscore.replace_all(&line, "$1");
        let line = rules.emphasis.replace_all(&line, "$1");
        let line = rules.emphasis_underscore.replace_all(&line, "$1$2$3");
        let line = rules.code.replace_all(&line, "$1");
        lines.push(line.into_owned());
    }
    normalize_lines(&lines.join("\n"))
}
