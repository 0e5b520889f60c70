//! Static maps: binary PGM rasters for pixel-exact comparison and
//! hand-written SVG for heat maps, choropleths and excursion maps.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::functionals::{EvalGrid, ExcursionLabel};
use crate::geometry::{BBox, Point2, Polygon};

/// Colour and legend text of the three excursion classes.
pub const EXCURSION_CLASSES: [(ExcursionLabel, &str, &str); 3] = [
    (ExcursionLabel::Below, "#2166ac", "below"),
    (ExcursionLabel::Above, "#b2182b", "above"),
    (ExcursionLabel::Indeterminate, "#000000", "indeterminate"),
];

/// Grey levels of the excursion classes in PGM output; 255 is background.
pub fn excursion_grey(label: ExcursionLabel) -> u8 {
    match label {
        ExcursionLabel::Below => 64,
        ExcursionLabel::Above => 192,
        ExcursionLabel::Indeterminate => 0,
    }
}

/// Image-ordered values (row 0 at the top); NaN marks empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Raster {
    /// Places one value per grid point.
    pub fn from_grid(grid: &EvalGrid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        let mut r = vec![f64::NAN; grid.nx * grid.ny];
        for (&(ix, iy), &v) in grid.cells.iter().zip(values) {
            r[(grid.ny - 1 - iy) * grid.nx + ix] = v;
        }
        Ok(Self {
            width: grid.nx,
            height: grid.ny,
            values: r,
        })
    }

    /// Finite value range.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().copied().filter(|v| v.is_finite());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Binary PGM with values mapped linearly from `[lo, hi]` to 0..=254 and
    /// empty cells at 255.
    pub fn write_pgm<W: Write>(&self, range: Option<(f64, f64)>, mut w: W) -> Result<()> {
        let (lo, hi) = range.or_else(|| self.range()).unwrap_or((0.0, 1.0));
        let span = if hi > lo { hi - lo } else { 1.0 };
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    (((v - lo) / span).clamp(0.0, 1.0) * 254.0).round() as u8
                } else {
                    255
                }
            })
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Three-class PGM of an excursion labelling.
pub fn write_excursion_pgm<W: Write>(
    grid: &EvalGrid,
    labels: &[ExcursionLabel],
    mut w: W,
) -> Result<()> {
    if labels.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} grid points",
            labels.len(),
            grid.len()
        )));
    }
    let mut px = vec![255u8; grid.nx * grid.ny];
    for (&(ix, iy), &l) in grid.cells.iter().zip(labels) {
        px[(grid.ny - 1 - iy) * grid.nx + ix] = excursion_grey(l);
    }
    write!(w, "P5\n{} {}\n255\n", grid.nx, grid.ny)?;
    w.write_all(&px)?;
    Ok(())
}

/// Sequential palette from dark purple through teal to yellow.
pub fn colour(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let k = STOPS
        .iter()
        .rposition(|s| s.0 <= t)
        .unwrap_or(0)
        .min(STOPS.len() - 2);
    let (t0, c0) = STOPS[k];
    let (t1, c1) = STOPS[k + 1];
    let f = (t - t0) / (t1 - t0);
    let c: Vec<u8> = (0..3)
        .map(|i| (c0[i] + f * (c1[i] - c0[i])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

const MAP_WIDTH: f64 = 600.0;
const MARGIN: f64 = 20.0;
const LEGEND_WIDTH: f64 = 160.0;
const TITLE_HEIGHT: f64 = 30.0;

/// World-to-pixel transform with the y axis flipped.
struct Frame {
    bb: BBox,
    scale: f64,
    height: f64,
}

impl Frame {
    fn new(bb: BBox) -> Self {
        let scale = MAP_WIDTH / bb.width().max(f64::MIN_POSITIVE);
        let height = (bb.height() * scale).max(120.0);
        Self { bb, scale, height }
    }

    fn px(&self, p: &Point2) -> (f64, f64) {
        (
            MARGIN + (p.x - self.bb.min.x) * self.scale,
            TITLE_HEIGHT + MARGIN + (self.bb.max.y - p.y) * self.scale,
        )
    }

    fn header(&self, out: &mut String, title: &str) {
        let w = MAP_WIDTH + 2.0 * MARGIN + LEGEND_WIDTH;
        let h = self.height + 2.0 * MARGIN + TITLE_HEIGHT;
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN}" y="22" font-family="sans-serif" font-size="16">{}</text>"#,
            escape(title)
        );
    }

    fn legend_x(&self) -> f64 {
        2.0 * MARGIN + MAP_WIDTH
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn colour_bar(out: &mut String, x: f64, y: f64, lo: f64, hi: f64) {
    let steps = 10;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        let _ = writeln!(
            out,
            r#"<rect class="legend" x="{x:.1}" y="{:.1}" width="20" height="16" fill="{}"/>"#,
            y + 16.0 * k as f64,
            colour(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{hi:.4}</text>"#,
        x + 26.0,
        y + 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{lo:.4}</text>"#,
        x + 26.0,
        y + 16.0 * steps as f64
    );
}

fn ring_path(frame: &Frame, poly: &Polygon) -> String {
    let mut d = String::new();
    for ring in poly.rings() {
        for (k, p) in ring.iter().enumerate() {
            let (x, y) = frame.px(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if k == 0 { "M" } else { "L" });
        }
        d.push_str("Z ");
    }
    d.trim_end().to_string()
}

fn grid_frame(grid: &EvalGrid) -> Frame {
    Frame::new(BBox {
        min: grid.origin,
        max: Point2::new(
            grid.origin.x + grid.nx as f64 * grid.spacing,
            grid.origin.y + grid.ny as f64 * grid.spacing,
        ),
    })
}

fn cell_rect(out: &mut String, frame: &Frame, grid: &EvalGrid, cell: (usize, usize), fill: &str) {
    let s = grid.spacing * frame.scale;
    let corner = Point2::new(
        grid.origin.x + cell.0 as f64 * grid.spacing,
        grid.origin.y + (cell.1 + 1) as f64 * grid.spacing,
    );
    let (x, y) = frame.px(&corner);
    let _ = writeln!(
        out,
        r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
        s + 0.05,
        s + 0.05
    );
}

fn outlines(out: &mut String, frame: &Frame, outline: &[Polygon]) {
    for p in outline {
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="white" stroke-width="0.6"/>"#,
            ring_path(frame, p)
        );
    }
}

/// Heat map of one value per grid point, colour scale over the data range.
pub fn heatmap_svg(
    grid: &EvalGrid,
    values: &[f64],
    outline: &[Polygon],
    title: &str,
) -> Result<String> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} grid points",
            values.len(),
            grid.len()
        )));
    }
    let (lo, hi) = Raster::from_grid(grid, values)?
        .range()
        .unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let frame = grid_frame(grid);
    let mut out = String::new();
    frame.header(&mut out, title);
    for (&cell, &v) in grid.cells.iter().zip(values) {
        if v.is_finite() {
            cell_rect(&mut out, &frame, grid, cell, &colour((v - lo) / span));
        }
    }
    outlines(&mut out, &frame, outline);
    colour_bar(&mut out, frame.legend_x(), TITLE_HEIGHT + MARGIN, lo, hi);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Areas coloured by value with the scale spanning the data min and max.
/// Areas without a finite value are drawn grey.
pub fn choropleth_svg(
    polygons: &[Polygon],
    values: &[(String, f64)],
    title: &str,
) -> Result<String> {
    let bb = BBox::from_points(polygons.iter().flat_map(|p| p.outer()))
        .ok_or_else(|| Error::NoData("no polygons to draw".into()))?;
    let finite: Vec<f64> = values
        .iter()
        .map(|v| v.1)
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let frame = Frame::new(bb);
    let mut out = String::new();
    frame.header(&mut out, title);
    for p in polygons {
        let v = values.iter().find(|(id, _)| id == p.id()).map(|v| v.1);
        let fill = match v {
            Some(v) if v.is_finite() => colour((v - lo) / span),
            _ => "#cccccc".to_string(),
        };
        let _ = writeln!(
            out,
            r#"<path data-area="{}" d="{}" fill="{fill}" fill-rule="evenodd" stroke="white" stroke-width="0.8"/>"#,
            escape(p.id()),
            ring_path(&frame, p)
        );
    }
    colour_bar(&mut out, frame.legend_x(), TITLE_HEIGHT + MARGIN, lo, hi);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Three-colour excursion map: blue below, red above, black indeterminate.
pub fn excursion_svg(
    grid: &EvalGrid,
    labels: &[ExcursionLabel],
    outline: &[Polygon],
    title: &str,
) -> Result<String> {
    if labels.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} grid points",
            labels.len(),
            grid.len()
        )));
    }
    let frame = grid_frame(grid);
    let mut out = String::new();
    frame.header(&mut out, title);
    for (&cell, l) in grid.cells.iter().zip(labels) {
        let fill = EXCURSION_CLASSES.iter().find(|c| c.0 == *l).unwrap().1;
        cell_rect(&mut out, &frame, grid, cell, fill);
    }
    outlines(&mut out, &frame, outline);
    let x = frame.legend_x();
    for (k, (_, fill, name)) in EXCURSION_CLASSES.iter().enumerate() {
        let y = TITLE_HEIGHT + MARGIN + 24.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect class="legend" x="{x:.1}" y="{y:.1}" width="16" height="16" fill="{fill}"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{name}</text>"#,
            x + 22.0,
            y + 12.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Rasterizes per-area values onto the grid cells lying in each area.
pub fn area_values_on_grid(
    grid: &EvalGrid,
    polygons: &[Polygon],
    values: &[(String, f64)],
) -> Vec<f64> {
    grid.points
        .iter()
        .map(|p| {
            polygons
                .iter()
                .find(|poly| poly.contains(p))
                .and_then(|poly| values.iter().find(|(id, _)| id == poly.id()))
                .map_or(f64::NAN, |v| v.1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> EvalGrid {
        let sq = Polygon::rectangle("sq", Point2::new(0.0, 0.0), Point2::new(1.0, 0.5)).unwrap();
        EvalGrid::new(&sq, 0.25).unwrap()
    }

    #[test]
    fn pgm_layout_and_scaling() {
        let g = grid();
        assert_eq!((g.nx, g.ny), (4, 2));
        let vals: Vec<f64> = (0..g.len()).map(|k| k as f64).collect();
        let r = Raster::from_grid(&g, &vals).unwrap();
        let mut buf = Vec::new();
        r.write_pgm(None, &mut buf).unwrap();
        let header = b"P5\n4 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let px = &buf[header.len()..];
        // Bottom grid row (values 0..3) is the last image row.
        assert_eq!(px[4], 0);
        assert_eq!(px[3], 254);
        let mut again = Vec::new();
        r.write_pgm(None, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn excursion_map_has_three_classes() {
        let g = grid();
        let labels: Vec<ExcursionLabel> = (0..g.len())
            .map(|k| {
                [
                    ExcursionLabel::Above,
                    ExcursionLabel::Below,
                    ExcursionLabel::Indeterminate,
                ][k % 3]
            })
            .collect();
        let svg = excursion_svg(&g, &labels, &[], "u = 0.07").unwrap();
        assert_eq!(svg.matches(r#"class="legend""#).count(), 3);
        for (_, fill, name) in EXCURSION_CLASSES {
            assert!(svg.contains(fill) && svg.contains(name));
        }
        let mut buf = Vec::new();
        write_excursion_pgm(&g, &labels, &mut buf).unwrap();
        let px = &buf[11..];
        assert!(px.iter().all(|v| [0, 64, 192].contains(v)));
    }

    #[test]
    fn choropleth_scale_spans_data() {
        let a = Polygon::rectangle("a", Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)).unwrap();
        let b = Polygon::rectangle("b", Point2::new(1.0, 0.0), Point2::new(2.0, 1.0)).unwrap();
        let svg = choropleth_svg(&[a, b], &[("a".into(), 0.05), ("b".into(), 0.12)], "T").unwrap();
        assert!(svg.contains(">0.0500<") && svg.contains(">0.1200<"));
        assert!(svg.contains(&colour(0.0)) && svg.contains(&colour(1.0)));
    }

    #[test]
    fn palette_endpoints() {
        assert_eq!(colour(0.0), "#440154");
        assert_eq!(colour(1.0), "#fde725");
        assert_eq!(colour(f64::NAN), "#440154");
    }
}
