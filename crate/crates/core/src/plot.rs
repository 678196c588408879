//! Actual-vs-predicted line charts as standalone SVG, with the plotted
//! points written alongside as CSV.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use crate::data::{format_timestamp, parse_timestamp};
use crate::error::{DataError, Error, Result};
use crate::experiment::Forecast;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Reads a `timestamp,actual,predicted` file.
pub fn read_forecast<R: Read>(source: R, station_id: &str) -> Result<Forecast> {
    let mut reader = csv::Reader::from_reader(source);
    let mut fc = Forecast {
        station_id: station_id.to_string(),
        timestamps: Vec::new(),
        actual: Vec::new(),
        predicted: Vec::new(),
    };
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(DataError::from)?;
        let line = i as u64 + 2;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let bad = |message: String| Error::from(DataError::Parse { line, message });
        let ts = parse_timestamp(field(0))
            .ok_or_else(|| bad(format!("bad timestamp {:?}", field(0))))?;
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number {:?}", field(k))))
        };
        fc.timestamps.push(ts);
        fc.actual.push(num(1)?);
        fc.predicted.push(num(2)?);
    }
    Ok(fc)
}

pub fn read_forecast_path(path: &Path, station_id: &str) -> Result<Forecast> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::from(e).context(path.display().to_string()))?;
    read_forecast(file, station_id)
}

/// Points with `from <= timestamp < to`.
pub fn select_range(fc: &Forecast, from: i64, to: i64) -> Result<Forecast> {
    let keep: Vec<usize> = (0..fc.len())
        .filter(|&i| (from..to).contains(&fc.timestamps[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Usage(format!(
            "no forecast points between {} and {}",
            format_timestamp(from),
            format_timestamp(to)
        )));
    }
    Ok(Forecast {
        station_id: fc.station_id.clone(),
        timestamps: keep.iter().map(|&i| fc.timestamps[i]).collect(),
        actual: keep.iter().map(|&i| fc.actual[i]).collect(),
        predicted: keep.iter().map(|&i| fc.predicted[i]).collect(),
    })
}

/// Round step near `span / target` from the 1-2-5 sequence.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = (span / target).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders the overlay; fails on an empty forecast.
pub fn render_svg(fc: &Forecast, title: &str) -> Result<String> {
    if fc.is_empty() {
        return Err(Error::Usage("nothing to plot".into()));
    }
    let (t0, t1) = (fc.timestamps[0], *fc.timestamps.last().unwrap());
    let hi = fc
        .actual
        .iter()
        .chain(&fc.predicted)
        .copied()
        .fold(0.0f64, f64::max);
    let y_step = nice_step(hi.max(1.0), 5.0);
    let y_max = (hi / y_step).ceil().max(1.0) * y_step;
    let span = (t1 - t0).max(1) as f64;
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = |t: i64| LEFT + (t - t0) as f64 / span * pw;
    let y = |v: f64| TOP + ph - v / y_max * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // Horizontal grid and flow labels.
    let ticks = (y_max / y_step).round() as usize;
    for k in 0..=ticks {
        let v = k as f64 * y_step;
        let yy = y(v);
        let label = (v * 1e9).round() / 1e9;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            yy + 4.0
        );
    }

    // Time ticks on whole hours.
    let hours = span / 3600.0;
    let tick_h = [1, 2, 3, 6, 12, 24, 48, 168]
        .into_iter()
        .find(|h| hours / *h as f64 <= 12.0)
        .unwrap_or(336);
    let tick = tick_h * 3600;
    let mut t = t0.div_euclid(tick) * tick;
    if t < t0 {
        t += tick;
    }
    while t <= t1 {
        let xx = x(t);
        let label = format_timestamp(t);
        let label = if tick_h >= 24 {
            &label[..10]
        } else {
            &label[5..16]
        };
        let _ = writeln!(
            s,
            r##"<line x1="{xx:.2}" y1="{TOP}" x2="{xx:.2}" y2="{:.2}" stroke="#eee"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
            TOP + ph,
            TOP + ph + 18.0
        );
        t += tick;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">Flow (vehicles per 15 min)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (values, color, dash, name, ly) in [
        (&fc.actual, "#1f4e9c", "", "Actual", TOP + 14.0),
        (
            &fc.predicted,
            "#d1495b",
            r#" stroke-dasharray="6 3""#,
            "Predicted",
            TOP + 30.0,
        ),
    ] {
        let pts: Vec<String> = fc
            .timestamps
            .iter()
            .zip(values.iter())
            .map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let lx = WIDTH - RIGHT - 120.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{name}</text>"#,
            lx + 28.0,
            lx + 34.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<stem>.svg` and `<stem>.csv` for the points in `[from, to)`.
/// Nothing is written when the range is empty.
pub fn plot_range(fc: &Forecast, from: i64, to: i64, title: &str, stem: &Path) -> Result<usize> {
    let part = select_range(fc, from, to)?;
    let svg = render_svg(&part, title)?;
    let mut csv = Vec::new();
    part.write_csv(&mut csv)?;
    std::fs::write(stem.with_extension("svg"), svg)?;
    std::fs::write(stem.with_extension("csv"), csv)?;
    Ok(part.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> Forecast {
        let start = parse_timestamp("2019-04-02 00:00:00").unwrap();
        let n = 96;
        Forecast {
            station_id: "s".into(),
            timestamps: (0..n).map(|i| start + 900 * i as i64).collect(),
            actual: (0..n)
                .map(|i| 50.0 + (i as f64 / 8.0).sin() * 40.0)
                .collect(),
            predicted: (0..n)
                .map(|i| 52.0 + (i as f64 / 8.0).sin() * 38.0)
                .collect(),
        }
    }

    #[test]
    fn range_selection_counts() {
        let fc = day();
        let from = fc.timestamps[10];
        let part = select_range(&fc, from, from + 4 * 3600).unwrap();
        assert_eq!(part.len(), 16);
        assert_eq!(part.timestamps[0], from);
        assert!(select_range(&fc, 0, 10).is_err());
    }

    #[test]
    fn svg_is_deterministic_and_complete() {
        let fc = day();
        let a = render_svg(&fc, "Station s <test>").unwrap();
        assert_eq!(a, render_svg(&fc, "Station s <test>").unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("&lt;test&gt;"));
        let pts = a
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(pts.split(' ').count(), 96);
    }

    #[test]
    fn csv_roundtrip() {
        let fc = day();
        let mut buf = Vec::new();
        fc.write_csv(&mut buf).unwrap();
        assert_eq!(read_forecast(buf.as_slice(), "s").unwrap(), fc);
    }

    #[test]
    fn steps_follow_one_two_five() {
        assert_eq!(nice_step(100.0, 5.0), 20.0);
        assert_eq!(nice_step(0.9, 5.0), 0.2);
        assert_eq!(nice_step(260.0, 5.0), 100.0);
    }
}
