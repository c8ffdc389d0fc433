//! RFS scalar field g̃ on a parameter lattice, its Sobel vector field, the
//! angle map, and the raster/streamline/CSV renderings.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::qstate::{uhlmann_fidelity, DensityMatrix};

/// Points λᵢ,ⱼ = origin + (j·step₁, i·step₂); row i runs along λ₂, column j along λ₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterLattice {
    pub origin: [f64; 2],
    pub step: [f64; 2],
    pub rows: usize,
    pub cols: usize,
}

impl ParameterLattice {
    pub fn new(origin: [f64; 2], step: [f64; 2], rows: usize, cols: usize) -> Self {
        ParameterLattice {
            origin,
            step,
            rows,
            cols,
        }
    }

    /// `cols` points spanning `l1` and `rows` points spanning `l2`, endpoints included.
    pub fn from_ranges(l1: [f64; 2], l2: [f64; 2], cols: usize, rows: usize) -> Result<Self> {
        if cols < 2 || rows < 2 || !(l1[1] > l1[0]) || !(l2[1] > l2[0]) {
            return Err(Error::Config(format!(
                "invalid lattice: ranges {l1:?} x {l2:?}, {cols} x {rows} points"
            )));
        }
        Ok(ParameterLattice {
            origin: [l1[0], l2[0]],
            step: [(l1[1] - l1[0]) / (cols - 1) as f64, (l2[1] - l2[0]) / (rows - 1) as f64],
            rows,
            cols,
        })
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + j as f64 * self.step[0],
            self.origin[1] + i as f64 * self.step[1],
        ]
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fractional lattice coordinates (x along columns, y along rows) to parameters.
    pub fn to_params(&self, x: f64, y: f64) -> [f64; 2] {
        [self.origin[0] + x * self.step[0], self.origin[1] + y * self.step[1]]
    }

    pub fn check_field_size(&self) -> Result<()> {
        if self.rows < 3 || self.cols < 3 {
            return Err(Error::GridTooSmall {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// √F on every lattice edge, stored once per edge; `None` on edges touching an invalid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFidelities {
    pub rows: usize,
    pub cols: usize,
    /// rows × (cols−1); entry (i, j) joins (i, j) and (i, j+1).
    pub horizontal: Vec<Option<f64>>,
    /// (rows−1) × cols; entry (i, j) joins (i, j) and (i+1, j).
    pub vertical: Vec<Option<f64>>,
}

impl EdgeFidelities {
    pub fn edge_count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }

    fn h(&self, i: usize, j: usize) -> Option<f64> {
        self.horizontal[i * (self.cols - 1) + j]
    }

    fn v(&self, i: usize, j: usize) -> Option<f64> {
        self.vertical[i * self.cols + j]
    }
}

pub fn edge_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    Ok(uhlmann_fidelity(a, b)?.sqrt())
}

pub fn edge_fidelities(
    rdms: &[DensityMatrix],
    valid: &[bool],
    rows: usize,
    cols: usize,
) -> Result<EdgeFidelities> {
    if rdms.len() != rows * cols || valid.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: rdms.len(),
        });
    }
    let pair = |a: usize, b: usize| -> Result<Option<f64>> {
        if valid[a] && valid[b] {
            edge_fidelity(&rdms[a], &rdms[b]).map(Some)
        } else {
            Ok(None)
        }
    };
    let horizontal = (0..rows * (cols - 1))
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e / (cols - 1), e % (cols - 1));
            pair(i * cols + j, i * cols + j + 1)
        })
        .collect::<Result<Vec<_>>>()?;
    let vertical = (0..(rows - 1) * cols)
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e / cols, e % cols);
            pair(i * cols + j, (i + 1) * cols + j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeFidelities {
        rows,
        cols,
        horizontal,
        vertical,
    })
}

/// Points whose own solve and every incident neighbor's solve succeeded.
pub fn incident_mask(valid: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    (0..rows * cols)
        .map(|p| {
            let (i, j) = (p / cols, p % cols);
            valid[p]
                && (i == 0 || valid[p - cols])
                && (i + 1 == rows || valid[p + cols])
                && (j == 0 || valid[p - 1])
                && (j + 1 == cols || valid[p + 1])
        })
        .collect()
}

/// g̃ = 4 − Σ f over the four incident edges, missing boundary edges counted as f = 1.
///
/// With `metric = Some([h₁, h₂])` each term 1 − f is divided by the squared
/// step of its direction. Cells without four valid incident edges are NaN.
pub fn rfs_grid(edges: &EdgeFidelities, metric: Option<[f64; 2]>) -> Vec<f64> {
    let (rows, cols) = (edges.rows, edges.cols);
    let (wh, wv) = match metric {
        Some([h1, h2]) => (1.0 / (h1 * h1), 1.0 / (h2 * h2)),
        None => (1.0, 1.0),
    };
    (0..rows * cols)
        .map(|p| {
            let (i, j) = (p / cols, p % cols);
            let mut horiz = Vec::with_capacity(2);
            let mut vert = Vec::with_capacity(2);
            if j > 0 {
                horiz.push(edges.h(i, j - 1));
            }
            if j + 1 < cols {
                horiz.push(edges.h(i, j));
            }
            if i > 0 {
                vert.push(edges.v(i - 1, j));
            }
            if i + 1 < rows {
                vert.push(edges.v(i, j));
            }
            let mut g = 0.0;
            for e in horiz {
                match e {
                    Some(f) => g += wh * (1.0 - f),
                    None => return f64::NAN,
                }
            }
            for e in vert {
                match e {
                    Some(f) => g += wv * (1.0 - f),
                    None => return f64::NAN,
                }
            }
            g
        })
        .collect()
}

const GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// 3×3 correlation with Gₓ (real part) and Gₓᵀ (imaginary part); samples
/// outside the grid are zero. Cells whose stencil touches a NaN are NaN.
pub fn sobel_gradient(g: &[f64], rows: usize, cols: usize) -> Result<Vec<C64>> {
    if rows < 3 || cols < 3 {
        return Err(Error::GridTooSmall { rows, cols });
    }
    Ok((0..rows * cols)
        .into_par_iter()
        .map(|p| {
            let (i, j) = ((p / cols) as isize, (p % cols) as isize);
            let mut re = 0.0;
            let mut im = 0.0;
            for (a, row) in GX.iter().enumerate() {
                for (b, &k) in row.iter().enumerate() {
                    let (di, dj) = (a as isize - 1, b as isize - 1);
                    let (ii, jj) = (i + di, j + dj);
                    if ii < 0 || jj < 0 || ii >= rows as isize || jj >= cols as isize {
                        continue;
                    }
                    let v = g[ii as usize * cols + jj as usize];
                    re += k * v;
                    // Gₓᵀ[a][b] = Gₓ[b][a]
                    im += GX[b][a] * v;
                }
            }
            C64::new(re, im)
        })
        .collect())
}

/// Principal argument in (−π, π]; `None` for the zero vector or NaN input.
pub fn principal_angle(p: C64) -> Option<f64> {
    if p.re.is_nan() || p.im.is_nan() || (p.re == 0.0 && p.im == 0.0) {
        return None;
    }
    let a = p.im.atan2(p.re);
    Some(if a <= -PI { PI } else { a })
}

/// P = −Sobel(g̃) and its angle map.
pub fn vector_field(g: &[f64], rows: usize, cols: usize) -> Result<(Vec<C64>, Vec<Option<f64>>)> {
    let p: Vec<C64> = sobel_gradient(g, rows, cols)?.into_iter().map(|z| -z).collect();
    let angle = p.iter().map(|&z| principal_angle(z)).collect();
    Ok((p, angle))
}

#[derive(Debug, Clone)]
pub struct RfsField {
    pub lattice: ParameterLattice,
    pub g: Vec<f64>,
    pub p: Vec<C64>,
    pub angle: Vec<Option<f64>>,
    pub valid: Vec<bool>,
}

impl RfsField {
    pub fn from_edges(lattice: ParameterLattice, edges: &EdgeFidelities, metric: bool) -> Result<Self> {
        lattice.check_field_size()?;
        let g = rfs_grid(edges, metric.then_some(lattice.step));
        Self::from_g(lattice, g)
    }

    pub fn from_g(lattice: ParameterLattice, g: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (lattice.rows, lattice.cols);
        let (p, angle) = vector_field(&g, rows, cols)?;
        let valid = p.iter().map(|z| !z.re.is_nan()).collect();
        Ok(RfsField {
            lattice,
            g,
            p,
            angle,
            valid,
        })
    }

    /// Full pipeline from per-point RDMs and solve flags.
    pub fn build(
        lattice: ParameterLattice,
        rdms: &[DensityMatrix],
        converged: &[bool],
        metric: bool,
    ) -> Result<Self> {
        lattice.check_field_size()?;
        let edges = edge_fidelities(rdms, converged, lattice.rows, lattice.cols)?;
        Self::from_edges(lattice, &edges, metric)
    }

    /// Per-column argmax of g̃ over rows (λ₂), restricted to valid cells.
    pub fn column_ridge(&self) -> Vec<Option<(usize, f64)>> {
        let (rows, cols) = (self.lattice.rows, self.lattice.cols);
        (0..cols)
            .map(|j| {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..rows {
                    let v = self.g[i * cols + j];
                    if v.is_nan() {
                        continue;
                    }
                    if best.map_or(true, |(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                best.map(|(i, _)| (i, self.lattice.point(i, j)[1]))
            })
            .collect()
    }
}

/// HSV colormap with hue (θ+π)/2π and S = V = 1; undefined cells are black.
pub fn cyclic_colormap(angle: &[Option<f64>]) -> Vec<[u8; 3]> {
    angle
        .iter()
        .map(|a| match a {
            Some(t) => hsv_to_rgb((t + PI) / (2.0 * PI)),
            None => [0, 0, 0],
        })
        .collect()
}

fn hsv_to_rgb(hue: f64) -> [u8; 3] {
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (r, g, b) = match sector as u8 {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    let q = |x: f64| (x * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Bilinear ×2 upsampling: output (2n−1)×(2m−1) with the input on even indices.
pub fn upsample2(grid: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize, usize) {
    let (r2, c2) = (2 * rows - 1, 2 * cols - 1);
    let mut out = vec![0.0; r2 * c2];
    for a in 0..r2 {
        for b in 0..c2 {
            let (i0, i1) = (a / 2, (a + 1) / 2);
            let (j0, j1) = (b / 2, (b + 1) / 2);
            let v = grid[i0 * cols + j0] + grid[i0 * cols + j1] + grid[i1 * cols + j0] + grid[i1 * cols + j1];
            out[a * c2 + b] = 0.25 * v;
        }
    }
    (out, r2, c2)
}

/// Upsamples an angle map through its unit vectors, so the ±π seam does not smear.
pub fn upsample2_angles(angle: &[Option<f64>], rows: usize, cols: usize) -> (Vec<Option<f64>>, usize, usize) {
    let cos: Vec<f64> = angle.iter().map(|a| a.map_or(f64::NAN, f64::cos)).collect();
    let sin: Vec<f64> = angle.iter().map(|a| a.map_or(f64::NAN, f64::sin)).collect();
    let (c, r2, c2) = upsample2(&cos, rows, cols);
    let (s, _, _) = upsample2(&sin, rows, cols);
    let out = c.iter().zip(&s).map(|(&x, &y)| principal_angle(C64::new(x, y))).collect();
    (out, r2, c2)
}

/// Binary PPM (P6). Row i = 0 of the grid is the bottom image row, so λ₂ increases upward.
pub fn ppm_bytes(rgb: &[[u8; 3]], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for i in (0..rows).rev() {
        for px in &rgb[i * cols..(i + 1) * cols] {
            out.extend_from_slice(px);
        }
    }
    out
}

pub type Polyline = Vec<[f64; 2]>;

fn bilinear_field(p: &[C64], rows: usize, cols: usize, x: f64, y: f64) -> Option<C64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (cols - 1) as f64 && y <= (rows - 1) as f64) {
        return None;
    }
    let j0 = (x.floor() as usize).min(cols - 2);
    let i0 = (y.floor() as usize).min(rows - 2);
    let (fx, fy) = (x - j0 as f64, y - i0 as f64);
    let at = |i: usize, j: usize| p[i * cols + j];
    let v = at(i0, j0) * ((1.0 - fx) * (1.0 - fy))
        + at(i0, j0 + 1) * (fx * (1.0 - fy))
        + at(i0 + 1, j0) * ((1.0 - fx) * fy)
        + at(i0 + 1, j0 + 1) * (fx * fy);
    if v.re.is_nan() || v.im.is_nan() {
        None
    } else {
        Some(v)
    }
}

/// Seeds on every other concentric ring of lattice points, outermost first.
pub fn spiral_seeds(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut seeds = Vec::new();
    let mut r = 0;
    while 2 * r < rows && 2 * r < cols {
        let (top, bottom, left, right) = (r, rows - 1 - r, r, cols - 1 - r);
        for j in left..=right {
            seeds.push((top, j));
        }
        for i in top + 1..=bottom {
            seeds.push((i, right));
        }
        if bottom > top {
            for j in (left..right).rev() {
                seeds.push((bottom, j));
            }
        }
        if right > left {
            for i in (top + 1..bottom).rev() {
                seeds.push((i, left));
            }
        }
        r += 2;
    }
    seeds
}

/// RK4 streamlines of the direction field P/|P| with arclength step of a quarter
/// lattice spacing, returned in parameter coordinates.
pub fn streamlines(p: &[C64], lattice: &ParameterLattice) -> Vec<Polyline> {
    let (rows, cols) = (lattice.rows, lattice.cols);
    let max_steps = 10 * rows.max(cols);
    let h = 0.25;
    let dir = |x: f64, y: f64| -> Option<C64> {
        let v = bilinear_field(p, rows, cols, x, y)?;
        let n = v.norm();
        if n < 1e-12 {
            None
        } else {
            Some(v / n)
        }
    };
    spiral_seeds(rows, cols)
        .into_par_iter()
        .map(|(i, j)| {
            let (mut x, mut y) = (j as f64, i as f64);
            let mut line = vec![lattice.to_params(x, y)];
            for _ in 0..max_steps {
                let Some(k1) = dir(x, y) else { break };
                let Some(k2) = dir(x + 0.5 * h * k1.re, y + 0.5 * h * k1.im) else { break };
                let Some(k3) = dir(x + 0.5 * h * k2.re, y + 0.5 * h * k2.im) else { break };
                let Some(k4) = dir(x + h * k3.re, y + h * k3.im) else { break };
                let d = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                let (nx, ny) = (x + d.re, y + d.im);
                if bilinear_field(p, rows, cols, nx, ny).is_none() {
                    break;
                }
                x = nx;
                y = ny;
                line.push(lattice.to_params(x, y));
            }
            line
        })
        .collect()
}

pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

/// CSV `lambda1,lambda2,g,Px,Py,angle,valid`, row-major.
pub fn field_csv(field: &RfsField) -> String {
    let lat = &field.lattice;
    let mut s = String::from("lambda1,lambda2,g,Px,Py,angle,valid\n");
    for i in 0..lat.rows {
        for j in 0..lat.cols {
            let k = i * lat.cols + j;
            let [l1, l2] = lat.point(i, j);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                fmt17(l1),
                fmt17(l2),
                fmt17(field.g[k]),
                fmt17(field.p[k].re),
                fmt17(field.p[k].im),
                field.angle[k].map_or_else(|| "nan".to_string(), fmt17),
                u8::from(field.valid[k])
            );
        }
    }
    s
}

/// SVG 1.1 document in parameter coordinates with λ₂ pointing up.
pub fn streamlines_svg(lines: &[Polyline], lattice: &ParameterLattice, overlays: &[(String, Polyline)]) -> String {
    let x0 = lattice.origin[0];
    let y0 = lattice.origin[1];
    let w = lattice.step[0] * (lattice.cols - 1) as f64;
    let h = lattice.step[1] * (lattice.rows - 1) as f64;
    let stroke = 0.002 * w.max(h);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="800" height="800" viewBox="{} {} {} {}" preserveAspectRatio="none">"#,
        fmt17(x0),
        fmt17(-(y0 + h)),
        fmt17(w),
        fmt17(h)
    );
    let _ = writeln!(s, r#"<g transform="scale(1,-1)" fill="none">"#);
    let pts = |l: &Polyline| {
        l.iter()
            .map(|p| format!("{},{}", fmt17(p[0]), fmt17(p[1])))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for l in lines {
        let _ = writeln!(s, r#"<polyline stroke="black" stroke-width="{}" points="{}"/>"#, fmt17(stroke), pts(l));
    }
    for (name, l) in overlays {
        let _ = writeln!(
            s,
            r#"<polyline class="{name}" stroke="red" stroke-width="{}" points="{}"/>"#,
            fmt17(2.0 * stroke),
            pts(l)
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

/// 4-connected components of cells below `frac`·max(g̃), i.e. the regions
/// separated by the ridges of the field. Ridge and invalid cells get `None`.
pub fn ridge_regions(g: &[f64], rows: usize, cols: usize, frac: f64) -> Vec<Option<usize>> {
    let max = g.iter().copied().filter(|v| !v.is_nan()).fold(0.0, f64::max);
    let open: Vec<bool> = g.iter().map(|&v| !v.is_nan() && v < frac * max).collect();
    let mut label = vec![None; rows * cols];
    let mut next = 0;
    for start in 0..rows * cols {
        if !open[start] || label[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        label[start] = Some(next);
        while let Some(p) = stack.pop() {
            let (i, j) = (p / cols, p % cols);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(p - cols);
            }
            if i + 1 < rows {
                nb.push(p + cols);
            }
            if j > 0 {
                nb.push(p - 1);
            }
            if j + 1 < cols {
                nb.push(p + 1);
            }
            for q in nb {
                if open[q] && label[q].is_none() {
                    label[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    label
}
