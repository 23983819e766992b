//! Closed corridor track with equal-arclength sectors.
//!
//! The corridor is a strip of quads `(L_j, L_{j+1}, R_{j+1}, R_j)` built by
//! offsetting a closed centerline polyline by half the width along its
//! vertex normals. Generated centerlines are equal-chord polygons and every
//! sector is the same number of consecutive quads, so sectors have equal
//! arclength.

use std::fmt::Write as _;

use rand::Rng;

use crate::seed;

pub type P2 = [f64; 2];

#[inline]
fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn norm(a: P2) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

fn point_segment_distance(p: P2, a: P2, b: P2) -> f64 {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) };
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1]]))
}

fn segments_intersect(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = cross(sub(b, a), sub(c, a));
    let d2 = cross(sub(b, a), sub(d, a));
    let d3 = cross(sub(d, c), sub(a, c));
    let d4 = cross(sub(d, c), sub(b, c));
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// Distance along a ray to a segment, if hit within `[0, max_t]`.
#[inline]
pub(crate) fn ray_segment(origin: P2, dir: P2, a: P2, b: P2) -> Option<f64> {
    let e = sub(b, a);
    let denom = cross(dir, e);
    if denom.abs() < 1e-14 {
        return None;
    }
    let ap = sub(a, origin);
    let t = cross(ap, e) / denom;
    let u = cross(ap, dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("could not generate a valid track from seed {seed} after {attempts} attempts (last: {last})")]
    Degenerate { seed: u64, attempts: usize, last: String },
    #[error("invalid track geometry: {0}")]
    Invalid(String),
    #[error("track file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackParams {
    pub base_radius: f64,
    pub width: f64,
    pub sectors: usize,
    /// Longest ray the sector-local segment lists must support.
    pub max_range: f64,
    pub vertices_per_sector: usize,
    /// Shape harmonic amplitude; harmonic `k` gets at most `amp / (k^2 - 1)`.
    pub amplitude: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams { base_radius: 11.0, width: 1.5, sectors: 110, max_range: 5.0, vertices_per_sector: 8, amplitude: 0.6 }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    width: f64,
    max_range: f64,
    center: Vec<P2>,
    left: Vec<P2>,
    right: Vec<P2>,
    /// First quad of every sector; sector `i` spans `[starts[i], starts[i+1])`.
    sector_starts: Vec<usize>,
    quad_sector: Vec<usize>,
    orientation: f64,
    /// Boundary segment ids per sector; `j < n` is left segment `j`, else right `j - n`.
    candidates: Vec<Vec<u32>>,
    cum_length: Vec<f64>,
}

const MAX_ATTEMPTS: usize = 16;

/// Seeded smooth loop, retried with derived seeds until it validates.
pub fn default_track(seed: u64) -> Result<Track, TrackError> {
    generate_track(seed, &TrackParams::default())
}

pub fn generate_track(seed_value: u64, params: &TrackParams) -> Result<Track, TrackError> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(seed_value, &[seed::tag("track"), attempt as u64]);
        let harmonics: Vec<(f64, f64, f64)> = (2..=4)
            .map(|k| {
                let k = k as f64;
                let a = rng.gen_range(0.0..params.amplitude / (k * k - 1.0));
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (k, a, phase)
            })
            .collect();
        let dense_n = 20_000;
        let dense: Vec<P2> = (0..dense_n)
            .map(|i| {
                let phi = std::f64::consts::TAU * i as f64 / dense_n as f64;
                let r = params.base_radius * (1.0 + harmonics.iter().map(|&(k, a, p)| a * (k * phi + p).cos()).sum::<f64>());
                [r * phi.cos(), r * phi.sin()]
            })
            .collect();
        let center = equal_chord_polygon(&dense, params.sectors * params.vertices_per_sector);
        let starts = (0..params.sectors).map(|i| i * params.vertices_per_sector).collect();
        match Track::from_centerline(center, starts, params.width, params.max_range) {
            Ok(t) => return Ok(t),
            Err(e) => {
                log::debug!("track attempt {attempt} rejected: {e}");
                last = e.to_string();
            }
        }
    }
    Err(TrackError::Degenerate { seed: seed_value, attempts: MAX_ATTEMPTS, last })
}

fn cumulative(points: &[P2]) -> Vec<f64> {
    let n = points.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for j in 0..n {
        let l = norm(sub(points[(j + 1) % n], points[j]));
        cum.push(cum[j] + l);
    }
    cum
}

/// First point ahead of `(seg, t)` on the closed polyline at distance `chord`
/// from `p`, as `(segment, parameter, unrolled segment count)`.
fn next_on_chord(dense: &[P2], p: P2, mut seg: usize, mut t: f64, chord: f64) -> (usize, f64, usize) {
    let n = dense.len();
    let mut laps = 0;
    loop {
        let a = dense[seg % n];
        let b = dense[(seg + 1) % n];
        let d = sub(b, a);
        let f = sub(a, p);
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - chord * chord;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let root = (-qb + disc.sqrt()) / (2.0 * qa);
            if root >= t && root <= 1.0 {
                return (seg % n, root, laps);
            }
        }
        seg += 1;
        t = 0.0;
        if seg.is_multiple_of(n) {
            laps += 1;
        }
    }
}

/// Closed polygon with `m` equal chords inscribed in the dense loop.
fn equal_chord_polygon(dense: &[P2], m: usize) -> Vec<P2> {
    let total = *cumulative(dense).last().unwrap();
    let walk = |chord: f64| -> (Vec<P2>, f64) {
        let mut pts = Vec::with_capacity(m);
        let (mut seg, mut t, mut laps) = (0usize, 0.0, 0usize);
        let mut p = dense[0];
        for _ in 0..m {
            pts.push(p);
            let (s2, t2, l2) = next_on_chord(dense, p, seg, t, chord);
            laps += l2;
            seg = s2;
            t = t2;
            let (a, b) = (dense[seg], dense[(seg + 1) % dense.len()]);
            p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        }
        // signed position of point m relative to the start, in segments
        let pos = laps as f64 * dense.len() as f64 + seg as f64 + t - dense.len() as f64;
        (pts, pos)
    };
    let (mut lo, mut hi) = (0.5 * total / m as f64, total / m as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if walk(mid).1 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    walk(0.5 * (lo + hi)).0
}

impl Track {
    /// Corridor around a closed centerline; `sector_starts` are vertex indices, the first must be 0.
    pub fn from_centerline(center: Vec<P2>, sector_starts: Vec<usize>, width: f64, max_range: f64) -> Result<Track, TrackError> {
        let n = center.len();
        if n < 3 || sector_starts.is_empty() || sector_starts[0] != 0 {
            return Err(TrackError::Invalid("need at least 3 vertices and a sector starting at vertex 0".into()));
        }
        if !(width > 0.0) {
            return Err(TrackError::Invalid(format!("width must be positive, got {width}")));
        }
        if sector_starts.windows(2).any(|w| w[1] <= w[0]) || *sector_starts.last().unwrap() >= n {
            return Err(TrackError::Invalid("sector starts must be increasing vertex indices".into()));
        }
        let half = width / 2.0;
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for j in 0..n {
            let d = sub(center[(j + 1) % n], center[(j + n - 1) % n]);
            let len = norm(d);
            if len == 0.0 {
                return Err(TrackError::Invalid(format!("degenerate tangent at vertex {j}")));
            }
            let nrm = [-d[1] / len, d[0] / len];
            left.push([center[j][0] + half * nrm[0], center[j][1] + half * nrm[1]]);
            right.push([center[j][0] - half * nrm[0], center[j][1] - half * nrm[1]]);
        }
        Self::assemble(center, left, right, sector_starts, width, max_range)
    }

    fn assemble(
        center: Vec<P2>,
        left: Vec<P2>,
        right: Vec<P2>,
        sector_starts: Vec<usize>,
        width: f64,
        max_range: f64,
    ) -> Result<Track, TrackError> {
        let n = center.len();
        let sectors = sector_starts.len();
        let mut quad_sector = vec![0; n];
        for s in 0..sectors {
            let end = if s + 1 < sectors { sector_starts[s + 1] } else { n };
            for q in &mut quad_sector[sector_starts[s]..end] {
                *q = s;
            }
        }
        let mut track = Track {
            width,
            max_range,
            center,
            left,
            right,
            sector_starts,
            quad_sector,
            orientation: 0.0,
            candidates: Vec::new(),
            cum_length: Vec::new(),
        };
        track.orientation = track.validate_quads()?;
        track.validate_boundaries()?;
        track.cum_length = cumulative(&track.center);
        track.candidates = track.compute_candidates();
        Ok(track)
    }

    fn quad(&self, j: usize) -> [P2; 4] {
        let n = self.center.len();
        let k = (j + 1) % n;
        [self.left[j], self.left[k], self.right[k], self.right[j]]
    }

    fn validate_quads(&self) -> Result<f64, TrackError> {
        let mut sign = 0.0;
        for j in 0..self.center.len() {
            let q = self.quad(j);
            for c in 0..4 {
                let (a, b, d) = (q[c], q[(c + 1) % 4], q[(c + 2) % 4]);
                let cr = cross(sub(b, a), sub(d, b));
                if cr.abs() < 1e-15 {
                    continue;
                }
                let s = cr.signum();
                if sign == 0.0 {
                    sign = s;
                } else if s != sign {
                    return Err(TrackError::Invalid(format!("quad {j} is not convex with consistent orientation")));
                }
            }
        }
        if sign == 0.0 {
            return Err(TrackError::Invalid("all quads degenerate".into()));
        }
        Ok(sign)
    }

    fn validate_boundaries(&self) -> Result<(), TrackError> {
        let n = self.center.len();
        let seg = |poly: &[P2], j: usize| (poly[j], poly[(j + 1) % n]);
        for (name_a, pa) in [("left", &self.left), ("right", &self.right)] {
            for (name_b, pb) in [("left", &self.left), ("right", &self.right)] {
                let same = std::ptr::eq(pa, pb);
                if name_a > name_b {
                    continue;
                }
                for i in 0..n {
                    let (a, b) = seg(pa, i);
                    let start = if same { i + 2 } else { 0 };
                    for j in start..n {
                        if same && (j + 1) % n == i {
                            continue;
                        }
                        let (c, d) = seg(pb, j);
                        if segments_intersect(a, b, c, d) {
                            return Err(TrackError::Invalid(format!("{name_a} segment {i} intersects {name_b} segment {j}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn segment_points(&self, id: usize) -> (P2, P2) {
        let n = self.center.len();
        if id < n {
            (self.left[id], self.left[(id + 1) % n])
        } else {
            let j = id - n;
            (self.right[j], self.right[(j + 1) % n])
        }
    }

    fn compute_candidates(&self) -> Vec<Vec<u32>> {
        let n = self.center.len();
        let sectors = self.sector_starts.len();
        (0..sectors)
            .map(|s| {
                let end = if s + 1 < sectors { self.sector_starts[s + 1] } else { n };
                let verts: Vec<P2> = (self.sector_starts[s]..end).flat_map(|j| self.quad(j)).collect();
                let cx = verts.iter().map(|p| p[0]).sum::<f64>() / verts.len() as f64;
                let cy = verts.iter().map(|p| p[1]).sum::<f64>() / verts.len() as f64;
                let radius = verts.iter().map(|p| norm(sub(*p, [cx, cy]))).fold(0.0, f64::max);
                (0..2 * n)
                    .filter(|&id| {
                        let (a, b) = self.segment_points(id);
                        point_segment_distance([cx, cy], a, b) <= radius + self.max_range + 1e-9
                    })
                    .map(|id| id as u32)
                    .collect()
            })
            .collect()
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn sector_count(&self) -> usize {
        self.sector_starts.len()
    }

    pub fn centerline(&self) -> &[P2] {
        &self.center
    }

    pub fn left_boundary(&self) -> &[P2] {
        &self.left
    }

    pub fn right_boundary(&self) -> &[P2] {
        &self.right
    }

    pub fn sector_starts(&self) -> &[usize] {
        &self.sector_starts
    }

    pub fn quad_count(&self) -> usize {
        self.center.len()
    }

    pub fn sector_of_quad(&self, quad: usize) -> usize {
        self.quad_sector[quad]
    }

    /// All boundary segments, left then right.
    pub fn boundary_segments(&self) -> Vec<(P2, P2)> {
        (0..2 * self.center.len()).map(|id| self.segment_points(id)).collect()
    }

    pub fn centerline_length(&self) -> f64 {
        *self.cum_length.last().unwrap()
    }

    /// Centerline arclength of each sector.
    pub fn sector_lengths(&self) -> Vec<f64> {
        let n = self.center.len();
        let sectors = self.sector_starts.len();
        (0..sectors)
            .map(|s| {
                let end = if s + 1 < sectors { self.sector_starts[s + 1] } else { n };
                self.cum_length[end] - self.cum_length[self.sector_starts[s]]
            })
            .collect()
    }

    /// Shortest sector edge measured along either boundary.
    pub fn min_boundary_sector_length(&self) -> f64 {
        let n = self.center.len();
        let sectors = self.sector_starts.len();
        let mut best = f64::INFINITY;
        for poly in [&self.left, &self.right] {
            let cum = cumulative(poly);
            for s in 0..sectors {
                let end = if s + 1 < sectors { self.sector_starts[s + 1] } else { n };
                best = best.min(cum[end] - cum[self.sector_starts[s]]);
            }
        }
        best
    }

    fn quad_contains(&self, j: usize, p: P2) -> bool {
        let q = self.quad(j);
        (0..4).all(|c| self.orientation * cross(sub(q[(c + 1) % 4], q[c]), sub(p, q[c])) >= 0.0)
    }

    /// Quad containing `p`, searching outward from `hint`.
    pub fn locate(&self, p: P2, hint: Option<usize>) -> Option<usize> {
        let n = self.center.len();
        let h = hint.unwrap_or(0) % n;
        if self.quad_contains(h, p) {
            return Some(h);
        }
        for d in 1..=n / 2 {
            let fwd = (h + d) % n;
            if self.quad_contains(fwd, p) {
                return Some(fwd);
            }
            let back = (h + n - d) % n;
            if self.quad_contains(back, p) {
                return Some(back);
            }
        }
        None
    }

    /// Sector containing `position`, or `None` when it is outside the corridor.
    pub fn sector_index(&self, position: P2) -> Option<usize> {
        self.locate(position, None).map(|q| self.quad_sector[q])
    }

    /// Normalized distance in `[0, 1]` to the nearest wall along the ray from
    /// `origin` at absolute angle `angle`; 0 outside the corridor.
    pub fn raycast(&self, origin: P2, angle: f64, range: f64) -> f64 {
        match self.locate(origin, None) {
            Some(q) => self.raycast_from_quad(q, origin, angle, range),
            None => 0.0,
        }
    }

    pub(crate) fn raycast_from_quad(&self, quad: usize, origin: P2, angle: f64, range: f64) -> f64 {
        debug_assert!(range <= self.max_range + 1e-12);
        let dir = [angle.cos(), angle.sin()];
        let mut best = range;
        for &id in &self.candidates[self.quad_sector[quad]] {
            let (a, b) = self.segment_points(id as usize);
            if let Some(t) = ray_segment(origin, dir, a, b) {
                if t < best {
                    best = t;
                }
            }
        }
        (best / range).clamp(0.0, 1.0)
    }

    /// Point and unit tangent on the centerline at arclength `s` (wrapped).
    pub fn point_at(&self, s: f64) -> (P2, P2) {
        let total = self.centerline_length();
        let s = s.rem_euclid(total);
        let n = self.center.len();
        let j = match self.cum_length.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(j) => j.min(n - 1),
            Err(j) => j - 1,
        };
        let (a, b) = (self.center[j], self.center[(j + 1) % n]);
        let seg = self.cum_length[j + 1] - self.cum_length[j];
        let t = if seg > 0.0 { (s - self.cum_length[j]) / seg } else { 0.0 };
        let d = sub(b, a);
        let l = norm(d);
        ([a[0] + t * d[0], a[1] + t * d[1]], [d[0] / l, d[1] / l])
    }

    /// Plain-text vertex list: one line per centerline vertex with its two
    /// boundary vertices and a sector-start flag.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# featurevo track v1").unwrap();
        writeln!(out, "width {}", self.width).unwrap();
        writeln!(out, "range {}", self.max_range).unwrap();
        writeln!(out, "vertices {}", self.center.len()).unwrap();
        let mut starts = self.sector_starts.iter().peekable();
        for j in 0..self.center.len() {
            let flag = if starts.peek() == Some(&&j) {
                starts.next();
                1
            } else {
                0
            };
            let (c, l, r) = (self.center[j], self.left[j], self.right[j]);
            writeln!(out, "{} {} {} {} {} {} {}", c[0], c[1], l[0], l[1], r[0], r[1], flag).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Track, TrackError> {
        let perr = |line: usize, message: String| TrackError::Parse { line, message };
        let mut width = None;
        let mut range = None;
        let mut expected = None;
        let (mut center, mut left, mut right, mut starts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(ln + 1, format!("{s}: {e}")));
            match fields[0] {
                "width" if fields.len() == 2 => width = Some(num(fields[1])?),
                "range" if fields.len() == 2 => range = Some(num(fields[1])?),
                "vertices" if fields.len() == 2 => expected = Some(fields[1].parse::<usize>().map_err(|e| perr(ln + 1, e.to_string()))?),
                _ if fields.len() == 7 => {
                    let v: Vec<f64> = fields[..6].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
                    match fields[6] {
                        "1" => starts.push(center.len()),
                        "0" => {}
                        other => return Err(perr(ln + 1, format!("bad sector flag {other}"))),
                    }
                    center.push([v[0], v[1]]);
                    left.push([v[2], v[3]]);
                    right.push([v[4], v[5]]);
                }
                _ => return Err(perr(ln + 1, format!("unrecognized line: {line}"))),
            }
        }
        let width = width.ok_or_else(|| perr(0, "missing width".into()))?;
        let range = range.ok_or_else(|| perr(0, "missing range".into()))?;
        if expected != Some(center.len()) {
            return Err(perr(0, format!("vertex count mismatch: header {:?}, found {}", expected, center.len())));
        }
        if starts.first() != Some(&0) {
            return Err(TrackError::Invalid("first vertex must start sector 0".into()));
        }
        Self::assemble(center, left, right, starts, width, range)
    }

    /// Checksum over the exact geometry, for regression fixtures.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_track_is_deterministic() {
        let a = default_track(3).unwrap();
        let b = default_track(3).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let c = default_track(4).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn sectors_have_equal_arclength() {
        let t = default_track(1).unwrap();
        assert_eq!(t.sector_count(), 110);
        let lens = t.sector_lengths();
        let mean = t.centerline_length() / 110.0;
        for l in lens {
            assert!(((l - mean) / mean).abs() < 1e-6, "{l} vs {mean}");
        }
    }

    #[test]
    fn corridor_width_positive() {
        let t = default_track(2).unwrap();
        for (l, r) in t.left_boundary().iter().zip(t.right_boundary()) {
            let w = norm(sub(*l, *r));
            assert!(w > 0.0 && (w - t.width()).abs() < 1e-9);
        }
    }

    #[test]
    fn start_line_and_next_sector() {
        let t = default_track(5).unwrap();
        let (p0, _) = t.point_at(0.0);
        assert_eq!(t.sector_index(p0), Some(0));
        let sl = t.centerline_length() / 110.0;
        let (p1, _) = t.point_at(sl * 1.0 + 1e-6);
        assert_eq!(t.sector_index(p1), Some(1));
    }

    #[test]
    fn outside_point_has_no_sector() {
        let t = default_track(5).unwrap();
        assert_eq!(t.sector_index([0.0, 0.0]), None);
        assert_eq!(t.raycast([0.0, 0.0], 0.0, 5.0), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let t = default_track(8).unwrap();
        let back = Track::from_text(&t.to_text()).unwrap();
        assert_eq!(back.checksum(), t.checksum());
        assert!(Track::from_text("width 1\nrange 2\nvertices 3\n").is_err());
    }
}
