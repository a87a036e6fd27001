//! Static SVG heatmaps with a fixed colormap and min/max annotations.

use std::fmt::Write;

use ndarray::ArrayView2;

/// Viridis sampled at nine evenly spaced stops.
const STOPS: [(u8, u8, u8); 9] = [
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (170, 220, 50),
    (253, 231, 37),
];

fn color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    (lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

/// Renders an `ny × nx` map with row 0 at the bottom (south). Non-finite
/// cells are grey.
pub fn render_svg(map: ArrayView2<'_, f64>, title: &str) -> String {
    let (ny, nx) = map.dim();
    let finite = map.iter().copied().filter(|v| v.is_finite());
    let min = finite.clone().fold(f64::INFINITY, f64::min);
    let max = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let px = (600 / nx.max(1)).clamp(1, 24);
    let (w, h) = (nx * px, ny * px);
    let (margin, header, footer) = (10, 28, 46);
    let width = w + 2 * margin;
    let height = h + header + footer;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{margin}" y="18" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    for iy in 0..ny {
        let y = header + (ny - 1 - iy) * px;
        for ix in 0..nx {
            let v = map[[iy, ix]];
            let fill = if v.is_finite() {
                let (r, g, b) = color((v - min) / span);
                format!("#{r:02x}{g:02x}{b:02x}")
            } else {
                "#999999".to_string()
            };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{px}" height="{px}" fill="{fill}"/>"#,
                margin + ix * px
            );
        }
    }
    // Color bar.
    let bar_y = header + h + 8;
    let steps = 64;
    let seg = w as f64 / steps as f64;
    for k in 0..steps {
        let (r, g, b) = color((k as f64 + 0.5) / steps as f64);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{bar_y}" width="{:.2}" height="10" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            margin as f64 + k as f64 * seg,
            seg + 0.01
        );
    }
    let text_y = bar_y + 26;
    let (lo, hi) = if min <= max {
        (format!("min {min:.4}"), format!("max {max:.4}"))
    } else {
        ("min n/a".to_string(), "max n/a".to_string())
    };
    let _ = writeln!(
        s,
        r#"<text x="{margin}" y="{text_y}" font-family="sans-serif" font-size="12">{lo}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{text_y}" font-family="sans-serif" font-size="12" text-anchor="end">{hi}</text>"#,
        margin + w
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(color(0.0), STOPS[0]);
        assert_eq!(color(1.0), STOPS[8]);
        assert_eq!(color(-3.0), STOPS[0]);
    }

    #[test]
    fn annotates_extremes_and_flips_rows() {
        let svg = render_svg(array![[0.0, 1.0], [2.0, f64::NAN]].view(), "a<b");
        assert!(svg.contains("min 0.0000"));
        assert!(svg.contains("max 2.0000"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("#999999"));
        // Value 2 (row 1) is drawn on the top row of pixels.
        let top = format!(r##"y="28" width="24" height="24" fill="#{:02x}{:02x}{:02x}""##, 253, 231, 37);
        assert!(svg.contains(&top), "{svg}");
        assert_eq!(svg, render_svg(array![[0.0, 1.0], [2.0, f64::NAN]].view(), "a<b"));
    }

    #[test]
    fn constant_map() {
        let svg = render_svg(ndarray::Array2::from_elem((3, 4), 5.0).view(), "c");
        assert!(svg.contains("min 5.0000") && svg.contains("max 5.0000"));
    }
}
