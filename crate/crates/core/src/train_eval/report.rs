use super::CheckpointAccuracy;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Standalone SVG line chart of accuracy against seconds before the maneuver,
/// with 5 s on the left.
pub fn checkpoint_svg(cp: &CheckpointAccuracy, title: &str) -> String {
    let xs = |s: f64| MARGIN + (5.0 - s) / 4.0 * (W - 2.0 * MARGIN);
    let ys = |a: f64| H - MARGIN - a * (H - 2.0 * MARGIN);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    out += &format!(
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - MARGIN,
        W - MARGIN
    );
    for tick in 0..=4 {
        let a = tick as f64 * 0.25;
        out += &format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.0}%</text>\n",
            MARGIN - 6.0,
            ys(a) + 3.0,
            a * 100.0
        );
    }
    for &s in &cp.seconds_before {
        out += &format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{s} s</text>\n",
            xs(s),
            H - MARGIN + 16.0
        );
    }
    let points: Vec<String> = cp
        .seconds_before
        .iter()
        .zip(&cp.accuracy)
        .map(|(&s, &a)| format!("{:.1},{:.1}", xs(s), ys(a)))
        .collect();
    out += &format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    );
    for p in &points {
        let (x, y) = p.split_once(',').expect("formatted pair");
        out += &format!("<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"#1f77b4\"/>\n");
    }
    out + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
