//! Stacked-panel figures of a shaping run: packets before and after the
//! shaper as dots (packet size on the vertical axis), then the shaper's
//! occupancy as step lines.

use std::fmt::Write;

use crate::model::StreamTrace;
use crate::shaper::{OccupancySample, StageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelKind {
    Scatter,
    Step,
}

impl PanelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PanelKind::Scatter => "scatter",
            PanelKind::Step => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Panel {
    pub title: &'static str,
    pub y_label: &'static str,
    pub kind: PanelKind,
    pub points: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelReport {
    pub panels: Vec<Panel>,
}

const WIDTH: f64 = 800.0;
const PANEL_H: f64 = 150.0;
const GAP: f64 = 40.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;

impl PanelReport {
    /// Leaky results get three panels, token results four.
    pub fn new(
        input: &StreamTrace,
        stage: &StageConfig,
        shaped: &StreamTrace,
        occupancy: &[OccupancySample],
    ) -> Self {
        let dots = |t: &StreamTrace| -> Vec<(u64, u64)> {
            t.active_timestamps()
                .into_iter()
                .zip(&t.packets)
                .map(|(ts, p)| (ts, p.size_bytes as u64))
                .collect()
        };
        let step = |f: fn(&OccupancySample) -> u64| -> Vec<(u64, u64)> {
            occupancy.iter().map(|o| (o.ts_us, f(o))).collect()
        };
        let mut panels = vec![
            Panel {
                title: "incoming traffic",
                y_label: "packet size (bytes)",
                kind: PanelKind::Scatter,
                points: dots(input),
            },
            Panel {
                title: "shaped traffic",
                y_label: "packet size (bytes)",
                kind: PanelKind::Scatter,
                points: dots(shaped),
            },
        ];
        match stage {
            StageConfig::Leaky(_) => panels.push(Panel {
                title: "bucket content (packets)",
                y_label: "packets",
                kind: PanelKind::Step,
                points: step(|o| o.queued_packets),
            }),
            StageConfig::Token(_) => {
                panels.push(Panel {
                    title: "packet queue (bytes)",
                    y_label: "bytes",
                    kind: PanelKind::Step,
                    points: step(|o| o.queued_bytes),
                });
                panels.push(Panel {
                    title: "tokens available",
                    y_label: "tokens (bytes)",
                    kind: PanelKind::Step,
                    points: step(|o| o.tokens),
                });
            }
        }
        PanelReport { panels }
    }

    /// Every plotted point: `panel,title,kind,ts_us,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("panel,title,kind,ts_us,value\n");
        for (i, p) in self.panels.iter().enumerate() {
            for (t, v) in &p.points {
                let _ = writeln!(s, "{i},{},{},{t},{v}", p.title, p.kind.as_str());
            }
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let t_max = self
            .panels
            .iter()
            .flat_map(|p| p.points.iter().map(|&(t, _)| t))
            .max()
            .unwrap_or(0)
            .max(1);
        let height = TOP + self.panels.len() as f64 * (PANEL_H + GAP) + 10.0;
        let plot_w = WIDTH - LEFT - RIGHT;
        let x = |t: u64| LEFT + t as f64 / t_max as f64 * plot_w;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

        for (i, panel) in self.panels.iter().enumerate() {
            let y0 = TOP + i as f64 * (PANEL_H + GAP);
            let base = y0 + PANEL_H;
            let v_max = panel
                .points
                .iter()
                .map(|&(_, v)| v)
                .max()
                .unwrap_or(0)
                .max(1);
            let y = |v: u64| base - v as f64 / v_max as f64 * PANEL_H;

            let _ = writeln!(
                s,
                r#"<g class="panel" id="panel-{i}" data-kind="{}" data-points="{}">"#,
                panel.kind.as_str(),
                panel.points.len()
            );
            let _ = writeln!(
                s,
                r#"<text class="title" x="{LEFT:.0}" y="{:.2}" font-weight="bold">{}</text>"#,
                y0 - 8.0,
                panel.title
            );
            let _ = writeln!(
                s,
                r#"<path class="axes" d="M{LEFT:.2} {y0:.2} V{base:.2} H{:.2}" stroke="black" fill="none"/>"#,
                LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text class="ylabel" x="12" y="{:.2}" transform="rotate(-90 12 {:.2})" text-anchor="middle">{}</text>"#,
                y0 + PANEL_H / 2.0,
                y0 + PANEL_H / 2.0,
                panel.y_label
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v_max}</text>"#,
                LEFT - 4.0,
                y0 + 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">0</text>"#,
                LEFT - 4.0,
                base + 4.0
            );
            let _ = writeln!(
                s,
                r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="end">time (us), 0 to {t_max}</text>"#,
                LEFT + plot_w,
                base + 14.0
            );

            match panel.kind {
                PanelKind::Scatter => {
                    for &(t, v) in &panel.points {
                        let _ =
                            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, x(t), y(v));
                    }
                }
                PanelKind::Step if !panel.points.is_empty() => {
                    let mut d = String::new();
                    for (k, &(t, v)) in panel.points.iter().enumerate() {
                        if k == 0 {
                            let _ = write!(d, "M{:.2} {:.2}", x(t), y(v));
                        } else {
                            let _ = write!(d, " H{:.2} V{:.2}", x(t), y(v));
                        }
                    }
                    let _ = writeln!(
                        s,
                        r#"<path class="step" d="{d}" stroke="steelblue" fill="none"/>"#
                    );
                }
                PanelKind::Step => {}
            }
            s.push_str("</g>\n");
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MediaPacket, StreamKind};
    use crate::shaper::{
        leaky_bucket_shape, token_bucket_shape, LeakyBucketConfig, Rate, TokenBucketConfig,
    };

    fn input() -> StreamTrace {
        StreamTrace::new(
            StreamKind::Audio,
            (0..6u16)
                .map(|i| MediaPacket {
                    seq: i,
                    ssrc: 1,
                    payload_type: 0,
                    marker: false,
                    send_ts_us: 0,
                    recv_ts_us: Some(i as u64 * 1000),
                    size_bytes: 125,
                })
                .collect(),
        )
    }

    #[test]
    fn leaky_layout() {
        let t = input();
        let r = leaky_bucket_shape(&t, &LeakyBucketConfig::new(2, 5000)).unwrap();
        let rep = PanelReport::new(&t, &r.stage, &r.shaped, &r.occupancy);
        let titles: Vec<_> = rep.panels.iter().map(|p| p.title).collect();
        assert_eq!(
            titles,
            vec![
                "incoming traffic",
                "shaped traffic",
                "bucket content (packets)"
            ]
        );
        assert_eq!(rep.panels[0].points.len(), 6);
        assert_eq!(rep.panels[1].points.len(), r.shaped.len());
        assert_eq!(rep.panels[2].points.len(), r.occupancy.len());
        let svg = rep.to_svg();
        assert_eq!(svg.matches(r#"<g class="panel""#).count(), 3);
        assert_eq!(svg.matches("<circle").count(), 6 + r.shaped.len());
        assert_eq!(
            rep.to_csv().lines().count(),
            1 + 6 + r.shaped.len() + r.occupancy.len()
        );
    }

    #[test]
    fn token_layout() {
        let t = input();
        let r = token_bucket_shape(&t, &TokenBucketConfig::new(Rate::new(50_000, 1), 250)).unwrap();
        let rep = PanelReport::new(&t, &r.stage, &r.shaped, &r.occupancy);
        assert_eq!(rep.panels.len(), 4);
        assert_eq!(rep.panels[3].title, "tokens available");
        assert_eq!(rep.to_svg().matches(r#"<g class="panel""#).count(), 4);
    }

    #[test]
    fn empty_result_is_valid_svg() {
        let t = StreamTrace::empty(StreamKind::Audio);
        let r = leaky_bucket_shape(&t, &LeakyBucketConfig::new(2, 5000)).unwrap();
        let svg = PanelReport::new(&t, &r.stage, &r.shaped, &r.occupancy).to_svg();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 0);
    }
}
