//! SVG timelines: one track per video, ground truth in black above
//! predictions in green.

use std::collections::BTreeMap;
use std::fmt::Write;

use s3d_core::{VideoAnnotations, VideoDetections};

const WIDTH: f64 = 1000.0;
const MARGIN_LEFT: f64 = 110.0;
const MARGIN_RIGHT: f64 = 20.0;
const TRACK_HEIGHT: f64 = 56.0;
const BAR_HEIGHT: f64 = 16.0;
const TOP: f64 = 30.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

#[derive(Default)]
struct Track<'a> {
    duration: f64,
    annotations: Option<&'a VideoAnnotations>,
    detections: Option<&'a VideoDetections>,
}

/// Renders detections with `score >= min_score` against the annotations.
pub fn render_timeline(detections: &[VideoDetections], annotations: &[VideoAnnotations], min_score: f64) -> String {
    let mut tracks: BTreeMap<&str, Track> = BTreeMap::new();
    for a in annotations {
        let t = tracks.entry(&a.video_id).or_default();
        t.annotations = Some(a);
        if a.fps > 0.0 {
            t.duration = t.duration.max(a.num_frames as f64 / a.fps);
        }
        for seg in &a.annotations {
            t.duration = t.duration.max(seg.end_sec);
        }
    }
    for d in detections {
        let t = tracks.entry(&d.video_id).or_default();
        t.detections = Some(d);
        for det in &d.detections {
            if det.score >= min_score {
                t.duration = t.duration.max(det.end_sec);
            }
        }
    }

    let height = TOP + TRACK_HEIGHT * tracks.len() as f64 + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_LEFT}" y="16" font-size="12">ground truth (black), detections (green)</text>"#
    );
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (row, (video_id, track)) in tracks.iter().enumerate() {
        let y = TOP + row as f64 * TRACK_HEIGHT;
        let scale = if track.duration > 0.0 { span / track.duration } else { 0.0 };
        let x = |t: f64| MARGIN_LEFT + t.max(0.0) * scale;
        let _ = writeln!(svg, r#"<g id="{}">"#, escape(&format!("track-{video_id}")));
        let _ = writeln!(
            svg,
            r#"<text x="4" y="{:.2}">{}</text>"#,
            y + BAR_HEIGHT + 4.0,
            escape(video_id)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ccc"/>"##,
            y + BAR_HEIGHT + 2.0,
            WIDTH - MARGIN_RIGHT,
            y + BAR_HEIGHT + 2.0
        );
        if let Some(a) = track.annotations {
            for seg in &a.annotations {
                let _ = writeln!(
                    svg,
                    r#"<rect class="gt" x="{:.2}" y="{y:.2}" width="{:.2}" height="{BAR_HEIGHT}" fill="black"><title>{}</title></rect>"#,
                    x(seg.start_sec),
                    (x(seg.end_sec) - x(seg.start_sec)).max(0.5),
                    escape(&format!("{} {:.2}-{:.2}s", seg.label, seg.start_sec, seg.end_sec))
                );
            }
        }
        if let Some(d) = track.detections {
            let yd = y + BAR_HEIGHT + 4.0;
            for det in d.detections.iter().filter(|d| d.score >= min_score) {
                let _ = writeln!(
                    svg,
                    r#"<rect class="det" x="{:.2}" y="{yd:.2}" width="{:.2}" height="{BAR_HEIGHT}" fill="green" fill-opacity="0.7"><title>{}</title></rect>"#,
                    x(det.start_sec),
                    (x(det.end_sec) - x(det.start_sec)).max(0.5),
                    escape(&format!("{} {:.2}-{:.2}s", det.label, det.start_sec, det.end_sec))
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}">{:.2}</text>"#,
                    x(det.start_sec),
                    yd + BAR_HEIGHT + 10.0,
                    det.score
                );
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}
