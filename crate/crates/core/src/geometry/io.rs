//! Polygon ingestion (GeoJSON subset and CSV rings) and mesh CSV export.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde_json::Value;

use super::{Point2, Polygon, TriMesh};
use crate::error::{Error, Result};

/// Reads polygons from GeoJSON text. Accepts a `FeatureCollection`, a single
/// `Feature`, or a bare `Polygon`/`MultiPolygon` geometry. Coordinates are taken
/// as planar map units. Parts of a `MultiPolygon` share the feature's id.
pub fn polygons_from_geojson(text: &str) -> Result<Vec<Polygon>> {
    let root: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    match root.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => {
            let features = root
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Parse("FeatureCollection without features".into()))?;
            for (k, f) in features.iter().enumerate() {
                feature_polygons(f, k, &mut out)?;
            }
        }
        Some("Feature") => feature_polygons(&root, 0, &mut out)?,
        Some(_) => geometry_polygons(&root, "0", &mut out)?,
        None => return Err(Error::Parse("GeoJSON object without type".into())),
    }
    if out.is_empty() {
        return Err(Error::Parse("GeoJSON contains no polygons".into()));
    }
    Ok(out)
}

fn feature_polygons(f: &Value, index: usize, out: &mut Vec<Polygon>) -> Result<()> {
    let props = f.get("properties");
    let id = props
        .and_then(|p| p.get("id").or_else(|| p.get("name")))
        .or_else(|| f.get("id"))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_else(|| index.to_string());
    let geom = f
        .get("geometry")
        .ok_or_else(|| Error::Parse(format!("feature {id} has no geometry")))?;
    geometry_polygons(geom, &id, out)
}

fn geometry_polygons(g: &Value, id: &str, out: &mut Vec<Polygon>) -> Result<()> {
    let coords = g
        .get("coordinates")
        .ok_or_else(|| Error::Parse(format!("geometry of {id} has no coordinates")))?;
    match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => out.push(Polygon::new(id, parse_rings(coords, id)?)?),
        Some("MultiPolygon") => {
            let parts = coords
                .as_array()
                .ok_or_else(|| Error::Parse(format!("{id}: MultiPolygon coordinates")))?;
            for part in parts {
                out.push(Polygon::new(id, parse_rings(part, id)?)?);
            }
        }
        other => {
            return Err(Error::Parse(format!(
                "{id}: unsupported geometry type {other:?}"
            )))
        }
    }
    Ok(())
}

fn parse_rings(v: &Value, id: &str) -> Result<Vec<Vec<Point2>>> {
    let bad = || Error::Parse(format!("{id}: malformed ring coordinates"));
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| {
                    let xy = pt.as_array().ok_or_else(bad)?;
                    match (
                        xy.first().and_then(Value::as_f64),
                        xy.get(1).and_then(Value::as_f64),
                    ) {
                        (Some(x), Some(y)) => Ok(Point2::new(x, y)),
                        _ => Err(bad()),
                    }
                })
                .collect()
        })
        .collect()
}

/// Writes polygons as a GeoJSON `FeatureCollection` with an `id` property.
pub fn polygons_to_geojson(polys: &[Polygon]) -> String {
    let features: Vec<Value> = polys
        .iter()
        .map(|p| {
            let rings: Vec<Value> = p
                .rings()
                .iter()
                .map(|r| {
                    let mut pts: Vec<Value> =
                        r.iter().map(|q| serde_json::json!([q.x, q.y])).collect();
                    pts.push(serde_json::json!([r[0].x, r[0].y]));
                    Value::Array(pts)
                })
                .collect();
            serde_json::json!({
                "type": "Feature",
                "properties": { "id": p.id() },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    serde_json::json!({ "type": "FeatureCollection", "features": features }).to_string()
}

#[derive(Debug, serde::Deserialize, serde::Serialize)]
struct RingRow {
    id: String,
    ring_index: usize,
    vertex_index: usize,
    x: f64,
    y: f64,
}

/// Reads the CSV ring format `id,ring_index,vertex_index,x,y`. Polygons keep the
/// order in which their ids first appear.
pub fn polygons_from_csv<R: Read>(reader: R) -> Result<Vec<Polygon>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut rings: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, Point2>>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: RingRow = row?;
        if !rings.contains_key(&row.id) {
            order.push(row.id.clone());
        }
        rings
            .entry(row.id)
            .or_default()
            .entry(row.ring_index)
            .or_default()
            .insert(row.vertex_index, Point2::new(row.x, row.y));
    }
    order
        .into_iter()
        .map(|id| {
            let r = rings.remove(&id).unwrap();
            Polygon::new(
                id,
                r.into_values().map(|v| v.into_values().collect()).collect(),
            )
        })
        .collect()
}

pub fn polygons_to_csv<W: Write>(polys: &[Polygon], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in polys {
        for (r, ring) in p.rings().iter().enumerate() {
            for (v, q) in ring.iter().enumerate() {
                w.serialize(RingRow {
                    id: p.id().to_string(),
                    ring_index: r,
                    vertex_index: v,
                    x: q.x,
                    y: q.y,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,x,y,interior` rows.
pub fn write_mesh_vertices<W: Write>(mesh: &TriMesh, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "x", "y", "interior"])?;
    for (i, p) in mesh.vertices().iter().enumerate() {
        w.write_record([
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            u8::from(mesh.is_interior(i)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `index,v0,v1,v2` rows.
pub fn write_mesh_triangles<W: Write>(mesh: &TriMesh, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "v0", "v1", "v2"])?;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        w.write_record([
            t.to_string(),
            tri[0].to_string(),
            tri[1].to_string(),
            tri[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mesh<R1: Read, R2: Read>(vertices: R1, triangles: R2) -> Result<TriMesh> {
    let mut verts = Vec::new();
    let mut interior = Vec::new();
    for rec in csv::Reader::from_reader(vertices).records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad vertex row {rec:?}")))
        };
        verts.push(Point2::new(num(1)?, num(2)?));
        interior.push(num(3)? != 0.0);
    }
    let mut tris = Vec::new();
    for rec in csv::Reader::from_reader(triangles).records() {
        let rec = rec?;
        let idx = |k: usize| -> Result<usize> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad triangle row {rec:?}")))
        };
        tris.push([idx(1)?, idx(2)?, idx(3)?]);
    }
    TriMesh::new(verts, tris, interior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geojson_feature_collection() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"name":"A"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}},
            {"type":"Feature","properties":{"id":7},
             "geometry":{"type":"MultiPolygon","coordinates":[
                [[[2,0],[3,0],[3,1],[2,0]]],
                [[[4,0],[5,0],[5,1],[4,0]]]]}}]}"#;
        let polys = polygons_from_geojson(text).unwrap();
        assert_eq!(polys.len(), 3);
        assert_eq!(polys[0].id(), "A");
        assert_eq!(polys[1].id(), "7");
        assert_eq!(polys[2].id(), "7");
        assert!((polys[0].area() - 1.0).abs() < 1e-12);
        let back = polygons_from_geojson(&polygons_to_geojson(&polys)).unwrap();
        assert_eq!(back, polys);
    }

    #[test]
    fn geojson_errors_are_reported() {
        assert!(polygons_from_geojson(r#"{"type":"Point","coordinates":[0,0]}"#).is_err());
        assert!(polygons_from_geojson("not json").is_err());
    }

    #[test]
    fn csv_rings_preserve_holes() {
        let text = "id,ring_index,vertex_index,x,y\n\
                    a,0,0,0,0\na,0,1,4,0\na,0,2,4,4\na,0,3,0,4\n\
                    a,1,0,1,1\na,1,1,1,2\na,1,2,2,2\na,1,3,2,1\n";
        let polys = polygons_from_csv(text.as_bytes()).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].rings().len(), 2);
        assert!((polys[0].area() - 15.0).abs() < 1e-12);
        let mut buf = Vec::new();
        polygons_to_csv(&polys, &mut buf).unwrap();
        assert_eq!(polygons_from_csv(buf.as_slice()).unwrap(), polys);
    }

    #[test]
    fn mesh_csv_round_trip() {
        let poly = Polygon::rectangle("r", Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)).unwrap();
        let mesh = crate::geometry::build_mesh(&poly, 0.3, 1.2, 0.6).unwrap();
        let (mut v, mut t) = (Vec::new(), Vec::new());
        write_mesh_vertices(&mesh, &mut v).unwrap();
        write_mesh_triangles(&mesh, &mut t).unwrap();
        let back = read_mesh(v.as_slice(), t.as_slice()).unwrap();
        assert_eq!(back, mesh);
    }
}
