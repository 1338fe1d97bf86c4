//! Labeled training samples drawn from a rendered scene and its corrupted
//! data.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::PixelClass;
use super::Rendered;
use crate::descriptors::DescriptorParams;
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use crate::projection::{sample_segments, Label, PinholeView, ProjectedSample};
use crate::scene::{GeoPoint, Scene};

pub const SAMPLES_HEADER: &str = "# obval-samples v1";
const COLUMNS: &str = "segment_id,u,v,pu,pv,nu,nv,lat,lon,alt,visible,label";

/// Share of negatives drawn from offset vectors, facades and background.
const NEGATIVE_MIX: [f64; 3] = [0.4, 0.3, 0.3];
/// Extra clearance for background negatives beyond the road half-width.
const BACKGROUND_MARGIN_PX: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBudget {
    pub positives: usize,
    pub negatives: usize,
    /// Initial sampling interval along roads and over the pixel grid.
    pub spacing_px: f64,
    pub seed: u64,
}

impl Default for LabelBudget {
    fn default() -> Self {
        Self {
            positives: 200,
            negatives: 200,
            spacing_px: 12.0,
            seed: 0,
        }
    }
}

/// True road centerlines in image space with their local half-widths.
struct ProjectedRoads {
    pieces: Vec<(Vec2, Vec2, f64)>,
}

impl ProjectedRoads {
    fn new(r: &Rendered, view: &PinholeView) -> Self {
        let hw = 0.5 * r.road_width_m;
        let mut pieces = Vec::new();
        for line in &r.centerlines {
            let proj: Vec<Option<(Vec2, f64)>> = line
                .iter()
                .map(|p| view.project(*p).pixel().map(|px| (px, hw * view.focal / view.depth(*p))))
                .collect();
            for w in proj.windows(2) {
                if let (Some((a, ha)), Some((b, hb))) = (w[0], w[1]) {
                    pieces.push((a, b, ha.max(hb)));
                }
            }
        }
        Self { pieces }
    }

    /// Smallest distance to a centerline piece minus that piece's half-width.
    fn clearance(&self, px: Vec2) -> f64 {
        self.pieces
            .iter()
            .map(|&(a, b, hw)| point_segment_distance(px, a, b) - hw)
            .fold(f64::INFINITY, f64::min)
    }
}

fn pick(rng: &mut ChaCha8Rng, pool: Vec<ProjectedSample>, n: usize) -> Vec<ProjectedSample> {
    if pool.len() <= n {
        return pool;
    }
    let mut idx = sample_indices(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

fn random_frame(rng: &mut ChaCha8Rng) -> (Vec2, Vec2) {
    let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let p = Vec2::new(a.cos(), a.sin());
    (p, p.perp())
}

/// Labels training samples for one rendered scene.
///
/// Positives are visible samples of the true roads whose pixel shows road.
/// Negatives come from the corrupted scene's road projections that land off
/// the true road, from facade and roof pixels, and from background ground.
/// Exactly `budget.positives` and `budget.negatives` samples are returned
/// unless the image cannot supply them at any spacing, in which case the
/// shortfall is reported as [`Error::ClassTooSmall`].
pub fn label_samples(
    truth: &Rendered,
    corrupted: &Scene,
    params: &DescriptorParams,
    budget: &LabelBudget,
) -> Result<Vec<ProjectedSample>> {
    if !(budget.spacing_px.is_finite() && budget.spacing_px > 0.0) {
        return Err(Error::validation("spacing_px", "must be positive"));
    }
    let (w, h) = truth.image.dimensions();
    let view = PinholeView::of_scene(&truth.scene);
    let roads = ProjectedRoads::new(truth, &view);
    let frame = truth.scene.frame();
    let fits = |px: Vec2| params.fits(w, h, px);
    let class_at = |px: Vec2| truth.class_at(px.x.round() as u32, px.y.round() as u32);
    let offsets_differ = corrupted.roads != truth.scene.roads;

    let mut spacing = budget.spacing_px;
    let mut pools: [Vec<ProjectedSample>; 4];
    loop {
        let positives: Vec<ProjectedSample> = sample_segments(&truth.scene, spacing)
            .into_iter()
            .filter(|s| s.visible && fits(s.px) && class_at(s.px) == PixelClass::Road)
            .map(|s| ProjectedSample { label: Label::Consistent, ..s })
            .collect();
        let offset: Vec<ProjectedSample> = if offsets_differ {
            sample_segments(corrupted, spacing)
                .into_iter()
                .filter(|s| fits(s.px) && class_at(s.px) != PixelClass::Road && roads.clearance(s.px) >= 0.0)
                .map(|s| ProjectedSample { label: Label::Inconsistent, ..s })
                .collect()
        } else {
            Vec::new()
        };
        let mut facade = Vec::new();
        let mut background = Vec::new();
        let step = spacing.max(1.0).round();
        let mut y = 0.0;
        while y < h as f64 {
            let mut x = 0.0;
            while x < w as f64 {
                let px = Vec2::new(x, y);
                if fits(px) {
                    let class = class_at(px);
                    let bucket = match class {
                        PixelClass::Facade | PixelClass::Roof => Some(&mut facade),
                        PixelClass::Terrain if roads.clearance(px) >= BACKGROUND_MARGIN_PX => Some(&mut background),
                        _ => None,
                    };
                    if let Some(bucket) = bucket {
                        let d = truth.depth[y as usize * w as usize + x as usize];
                        if d.is_finite() {
                            let world = frame.to_geo(view.back_project_at_depth(px, d));
                            bucket.push(ProjectedSample {
                                segment_id: 0,
                                world,
                                px,
                                primary_dir: Vec2::new(1.0, 0.0),
                                normal_dir: Vec2::new(0.0, 1.0),
                                visible: true,
                                label: Label::Inconsistent,
                            });
                        }
                    }
                }
                x += step;
            }
            y += step;
        }
        pools = [positives, offset, facade, background];
        let negatives: usize = pools[1..].iter().map(Vec::len).sum();
        if (pools[0].len() >= budget.positives && negatives >= budget.negatives) || spacing < 1.0 {
            break;
        }
        spacing *= 0.5;
    }
    let [positives, offset, facade, background] = pools;
    if positives.len() < budget.positives {
        return Err(Error::ClassTooSmall { have: positives.len(), need: budget.positives });
    }
    let available = offset.len() + facade.len() + background.len();
    if available < budget.negatives {
        return Err(Error::ClassTooSmall { have: available, need: budget.negatives });
    }

    // split the negative budget by the mix, spilling shortfalls onto the others
    let lens = [offset.len(), facade.len(), background.len()];
    let mut quota = [0usize; 3];
    let active: Vec<usize> = (0..3).filter(|&k| lens[k] > 0).collect();
    let weight: f64 = active.iter().map(|&k| NEGATIVE_MIX[k]).sum();
    let mut assigned = 0;
    for &k in &active {
        quota[k] = ((budget.negatives as f64 * NEGATIVE_MIX[k] / weight).floor() as usize).min(lens[k]);
        assigned += quota[k];
    }
    while assigned < budget.negatives {
        let k = (0..3)
            .filter(|&k| quota[k] < lens[k])
            .max_by_key(|&k| lens[k] - quota[k])
            .expect("enough negatives available");
        quota[k] += 1;
        assigned += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut out = pick(&mut rng, positives, budget.positives);
    out.extend(pick(&mut rng, offset, quota[0]));
    for (pool, n) in [(facade, quota[1]), (background, quota[2])] {
        for mut s in pick(&mut rng, pool, n) {
            let (p, nrm) = random_frame(&mut rng);
            s.primary_dir = p;
            s.normal_dir = nrm;
            out.push(s);
        }
    }
    Ok(out)
}

/// Serializes samples as a versioned CSV table.
pub fn samples_to_string(samples: &[ProjectedSample]) -> String {
    let mut s = format!("{SAMPLES_HEADER}\n{COLUMNS}\n");
    for p in samples {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            p.segment_id,
            p.px.x,
            p.px.y,
            p.primary_dir.x,
            p.primary_dir.y,
            p.normal_dir.x,
            p.normal_dir.y,
            p.world.lat,
            p.world.lon,
            p.world.alt,
            p.visible as u8,
            p.label.as_i8()
        );
    }
    s
}

pub fn samples_from_str(text: &str, context: &str) -> Result<Vec<ProjectedSample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == SAMPLES_HEADER => {}
        _ => return Err(Error::parse(context, format!("missing `{SAMPLES_HEADER}` header"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line == COLUMNS {
            continue;
        }
        let bad = |m: &str| Error::parse(format!("{context}:{}", i + 1), m.to_string());
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad("expected 12 fields"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad("bad number"));
        let label = f[11]
            .parse::<i8>()
            .ok()
            .and_then(Label::from_i8)
            .ok_or_else(|| bad("label must be -1, 0 or 1"))?;
        out.push(ProjectedSample {
            segment_id: f[0].parse().map_err(|_| bad("bad segment id"))?,
            px: Vec2::new(num(1)?, num(2)?),
            primary_dir: Vec2::new(num(3)?, num(4)?),
            normal_dir: Vec2::new(num(5)?, num(6)?),
            world: GeoPoint::new(num(7)?, num(8)?, num(9)?),
            visible: match f[10] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("visible must be 0 or 1")),
            },
            label,
        });
    }
    Ok(out)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[ProjectedSample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, samples_to_string(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<ProjectedSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    samples_from_str(&text, &path.display().to_string())
}
