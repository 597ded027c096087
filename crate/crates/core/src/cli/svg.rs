use std::fmt::Write as _;

const SIZE: f64 = 400.0;
const PAD: f64 = 40.0;

/// ROC curve as a bare SVG polyline over the unit square, with the chance
/// diagonal dashed.
pub fn roc_svg(fpr: &[f64], tpr: &[f64], title: &str) -> String {
    let span = SIZE - 2.0 * PAD;
    let px = |x: f64| PAD + x * span;
    let py = |y: f64| SIZE - PAD - y * span;
    let points: Vec<String> = fpr.iter().zip(tpr).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#).unwrap();
    writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{span}" height="{span}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )
    .unwrap();
    writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, points.join(" ")).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">false positive rate</text>"#, SIZE / 2.0, SIZE - 10.0)
        .unwrap();
    writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {})">true positive rate</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    )
    .unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, SIZE / 2.0, escape(title)).unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
