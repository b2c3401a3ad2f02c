//! Minimal self-contained SVG plots: a scatter with highlighted front
//! members and a step curve. No external renderer, stable output bytes.

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub radius: f64,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Polyline drawn over the data, e.g. the front staircase or HV curve.
    pub line: Option<(Vec<(f64, f64)>, &'static str)>,
    /// Embedded generation timestamp; `None` keeps the bytes reproducible.
    pub timestamp: Option<String>,
}

const W: f64 = 800.0;
const H: f64 = 560.0;
const MARGIN: f64 = 64.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.06;
    (lo - pad, hi + pad)
}

impl Plot {
    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.line.iter().flat_map(|(l, _)| l.iter().map(|p| p.0)));
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.line.iter().flat_map(|(l, _)| l.iter().map(|p| p.1)));
        let (x_lo, x_hi) = bounds(xs);
        let (y_lo, y_hi) = bounds(ys);
        let sx = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
        let sy = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        if let Some(ts) = &self.timestamp {
            out.push_str(&format!("<!-- generated {ts} -->\n"));
        }
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        // Axes.
        out.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN
        ));
        out.push_str(&format!(
            "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
            m = MARGIN,
            t = MARGIN,
            b = H - MARGIN
        ));
        // Axis extents and labels.
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{:.4}</text>\n",
            MARGIN,
            H - MARGIN + 18.0,
            x_lo
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{:.4}</text>\n",
            W - MARGIN,
            H - MARGIN + 18.0,
            x_hi
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.4}</text>\n",
            MARGIN - 6.0,
            H - MARGIN,
            y_lo
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.4}</text>\n",
            MARGIN - 6.0,
            MARGIN + 4.0,
            y_hi
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            xml_escape(&self.title)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            W / 2.0,
            H - 16.0,
            xml_escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            H / 2.0,
            H / 2.0,
            xml_escape(&self.y_label)
        ));
        if let Some((line, color)) = &self.line {
            let path: Vec<String> = line
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                path.join(" "),
                color
            ));
        }
        for series in &self.series {
            for (x, y) in &series.points {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{}\" fill=\"{}\"/>\n",
                    sx(*x),
                    sy(*y),
                    series.radius,
                    series.color
                ));
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
