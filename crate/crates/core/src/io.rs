//! JSON and CSV artifacts. Parse errors carry the JSON pointer of the
//! offending value.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use thiserror::Error;

use crate::csst::Word;
use crate::dyadic::{fmt_rational, parse_rational, DyadicPoint};
use crate::generators::ExcursionSample;
use crate::homeo::TileHomeomorphism;
use crate::subdivision::{from_cuts, SubdivisionError, SubdivisionSequence};
use crate::tree::{MetricMode, SimplicialMetricTree, TreeError};
use crate::Rational;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("schema error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
}

fn schema(pointer: &str, message: impl Into<String>) -> IoError {
    IoError::Schema {
        pointer: if pointer.is_empty() {
            "/".into()
        } else {
            pointer.into()
        },
        message: message.into(),
    }
}

fn field<'a>(v: &'a Value, ptr: &str, key: &str) -> Result<(&'a Value, String), IoError> {
    let p = format!("{ptr}/{key}");
    let obj = v
        .as_object()
        .ok_or_else(|| schema(ptr, "expected an object"))?;
    obj.get(key)
        .map(|x| (x, p))
        .ok_or_else(|| schema(ptr, format!("missing field `{key}`")))
}

fn array<'a>(v: &'a Value, ptr: &str) -> Result<&'a Vec<Value>, IoError> {
    v.as_array().ok_or_else(|| schema(ptr, "expected an array"))
}

fn uint(v: &Value, ptr: &str) -> Result<usize, IoError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(ptr, "expected a non-negative integer"))
}

fn string<'a>(v: &'a Value, ptr: &str) -> Result<&'a str, IoError> {
    v.as_str().ok_or_else(|| schema(ptr, "expected a string"))
}

fn rational(v: &Value, ptr: &str) -> Result<crate::Rational, IoError> {
    parse_rational(string(v, ptr)?).map_err(|m| schema(ptr, m))
}

fn uint_list(v: &Value, ptr: &str) -> Result<Vec<usize>, IoError> {
    array(v, ptr)?
        .iter()
        .enumerate()
        .map(|(i, x)| uint(x, &format!("{ptr}/{i}")))
        .collect()
}

fn word(v: &Value, ptr: &str) -> Result<Word, IoError> {
    string(v, ptr)?
        .parse()
        .map_err(|_| schema(ptr, "invalid word"))
}

pub fn tree_to_json(tree: &SimplicialMetricTree) -> Value {
    let mode = match tree.mode() {
        MetricMode::Geodesic => "geodesic",
        MetricMode::Euclidean => "euclidean",
    };
    let vertices: Vec<Value> = (0..tree.vertex_count())
        .map(|v| match tree.positions() {
            Some(p) => json!({"id": v, "pos": p[v]}),
            None => json!({"id": v}),
        })
        .collect();
    let edges: Vec<Value> = (0..tree.edge_count())
        .map(|e| {
            let (u, v) = tree.edge(e);
            json!({"u": u, "v": v, "len": fmt_rational(&tree.edge_length(e))})
        })
        .collect();
    json!({"metric": mode, "vertices": vertices, "edges": edges, "marks": tree.marks()})
}

pub fn tree_from_json(v: &Value) -> Result<SimplicialMetricTree, IoError> {
    let (m, mp) = field(v, "", "metric")?;
    let mode = match string(m, &mp)? {
        "geodesic" => MetricMode::Geodesic,
        "euclidean" => MetricMode::Euclidean,
        other => return Err(schema(&mp, format!("unknown metric `{other}`"))),
    };
    let (vs, vp) = field(v, "", "vertices")?;
    let vs = array(vs, &vp)?;
    let n = vs.len();
    let mut positions: Vec<Option<DyadicPoint>> = vec![None; n];
    let mut seen = vec![false; n];
    for (i, x) in vs.iter().enumerate() {
        let p = format!("{vp}/{i}");
        let (id, ip) = field(x, &p, "id")?;
        let id = uint(id, &ip)?;
        if id >= n || seen[id] {
            return Err(schema(
                &ip,
                "ids must be distinct and below the vertex count",
            ));
        }
        seen[id] = true;
        if let Some(pos) = x.get("pos") {
            positions[id] = Some(
                serde_json::from_value(pos.clone())
                    .map_err(|e| schema(&format!("{p}/pos"), e.to_string()))?,
            );
        }
    }
    let positions = if positions.iter().all(Option::is_some) && n > 0 {
        Some(positions.into_iter().map(Option::unwrap).collect())
    } else if positions.iter().any(Option::is_some) {
        return Err(schema(&vp, "either all or no vertices carry `pos`"));
    } else {
        None
    };
    let (es, ep) = field(v, "", "edges")?;
    let mut edges = Vec::new();
    for (i, x) in array(es, &ep)?.iter().enumerate() {
        let p = format!("{ep}/{i}");
        let (a, ap) = field(x, &p, "u")?;
        let (b, bp) = field(x, &p, "v")?;
        let (l, lp) = field(x, &p, "len")?;
        let len = rational(l, &lp)?;
        if len <= Rational::from_integer(0) {
            return Err(schema(&lp, "edge length must be positive"));
        }
        edges.push((uint(a, &ap)?, uint(b, &bp)?, len));
    }
    let marks = match v.get("marks") {
        Some(m) => uint_list(m, "/marks")?,
        None => Vec::new(),
    };
    Ok(SimplicialMetricTree::new(mode, n, edges, positions, marks)?)
}

pub fn subdivision_to_json(seq: &SubdivisionSequence) -> Value {
    let levels: Vec<Value> = seq
        .levels
        .iter()
        .zip(&seq.cuts)
        .map(|(d, cut)| {
            let tiles: Vec<Value> = d
                .tiles
                .iter()
                .map(|t| json!({"edges": t.edges, "boundary": t.boundary}))
                .collect();
            json!({"V": cut, "tiles": tiles})
        })
        .collect();
    json!({"delta": fmt_rational(&seq.delta), "normalize": seq.normalize, "levels": levels})
}

/// Rebuilds the sequence from its cut sets and checks the stored tiles.
pub fn subdivision_from_json(
    tree: &SimplicialMetricTree,
    v: &Value,
) -> Result<SubdivisionSequence, IoError> {
    let (d, dp) = field(v, "", "delta")?;
    let delta = rational(d, &dp)?;
    let normalize = v
        .get("normalize")
        .map_or(Some(true), Value::as_bool)
        .ok_or_else(|| schema("/normalize", "expected a boolean"))?;
    let (ls, lp) = field(v, "", "levels")?;
    let ls = array(ls, &lp)?;
    if ls.is_empty() {
        return Err(schema(&lp, "at least one level required"));
    }
    let mut cuts = Vec::new();
    let mut stored = Vec::new();
    for (n, l) in ls.iter().enumerate() {
        let p = format!("{lp}/{n}");
        let (c, cp) = field(l, &p, "V")?;
        cuts.push(uint_list(c, &cp)?);
        let (ts, tp) = field(l, &p, "tiles")?;
        let mut tiles = Vec::new();
        for (i, t) in array(ts, &tp)?.iter().enumerate() {
            let q = format!("{tp}/{i}");
            let (e, ep) = field(t, &q, "edges")?;
            let (b, bp) = field(t, &q, "boundary")?;
            tiles.push((uint_list(e, &ep)?, uint_list(b, &bp)?));
        }
        stored.push(tiles);
    }
    let seq = from_cuts(tree, delta, normalize, cuts)?;
    for (n, tiles) in stored.iter().enumerate() {
        let built = &seq.levels[n].tiles;
        if built.len() != tiles.len() {
            return Err(schema(
                &format!("{lp}/{n}/tiles"),
                format!("{} tiles stored, {} induced by V", tiles.len(), built.len()),
            ));
        }
        for (i, (t, (e, b))) in built.iter().zip(tiles).enumerate() {
            if &t.edges != e || &t.boundary != b {
                return Err(schema(
                    &format!("{lp}/{n}/tiles/{i}"),
                    "tile differs from the decomposition induced by V",
                ));
            }
        }
    }
    Ok(seq)
}

pub fn homeo_to_json(h: &TileHomeomorphism) -> Value {
    let levels: Vec<Value> = h
        .words
        .iter()
        .enumerate()
        .map(|(n, ws)| {
            let tiles: Vec<Value> = ws
                .iter()
                .enumerate()
                .map(|(i, w)| json!({"tile_id": i, "word": w}))
                .collect();
            let vertices: Vec<Value> = h
                .vertex_words
                .iter()
                .filter(|(v, _)| h.vertex_level[v] <= n)
                .map(|(v, w)| json!({"v": v, "word_of_g0": w}))
                .collect();
            json!({"tiles": tiles, "vertices": vertices})
        })
        .collect();
    json!({"levels": levels})
}

/// Words and vertex images only; refinement checks are not stored.
pub fn homeo_from_json(v: &Value) -> Result<TileHomeomorphism, IoError> {
    let (ls, lp) = field(v, "", "levels")?;
    let ls = array(ls, &lp)?;
    if ls.is_empty() {
        return Err(schema(&lp, "at least one level required"));
    }
    let mut words = Vec::new();
    let mut vertex_words = BTreeMap::new();
    let mut vertex_level = BTreeMap::new();
    for (n, l) in ls.iter().enumerate() {
        let p = format!("{lp}/{n}");
        let (ts, tp) = field(l, &p, "tiles")?;
        let ts = array(ts, &tp)?;
        let mut level = vec![None; ts.len()];
        for (i, t) in ts.iter().enumerate() {
            let q = format!("{tp}/{i}");
            let (id, ip) = field(t, &q, "tile_id")?;
            let id = uint(id, &ip)?;
            if id >= ts.len() || level[id].is_some() {
                return Err(schema(
                    &ip,
                    "tile ids must be distinct and below the tile count",
                ));
            }
            let (w, wp) = field(t, &q, "word")?;
            level[id] = Some(word(w, &wp)?);
        }
        words.push(level.into_iter().map(Option::unwrap).collect());
        let (vs, vp) = field(l, &p, "vertices")?;
        for (i, x) in array(vs, &vp)?.iter().enumerate() {
            let q = format!("{vp}/{i}");
            let (id, ip) = field(x, &q, "v")?;
            let id = uint(id, &ip)?;
            let (w, wp) = field(x, &q, "word_of_g0")?;
            let w = word(w, &wp)?;
            if let Some(old) = vertex_words.get(&id) {
                if old != &w {
                    return Err(schema(&wp, "vertex image changes between levels"));
                }
            } else {
                vertex_words.insert(id, w);
                vertex_level.insert(id, n);
            }
        }
    }
    Ok(TileHomeomorphism {
        words,
        vertex_words,
        vertex_level,
        checks: Vec::new(),
    })
}

pub fn excursion_to_csv(s: &ExcursionSample) -> String {
    let mut out = String::from("t,e\n");
    for (j, x) in s.values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", j as f64 / s.resolution as f64, x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csst::build_jn;
    use crate::subdivision::{build_levels, SubdivisionConfig};
    use crate::Rational;

    #[test]
    fn tree_round_trip() {
        let t = build_jn(2).tree;
        let j = tree_to_json(&t);
        let back = tree_from_json(&j).unwrap();
        assert_eq!(tree_to_json(&back), j);
    }

    #[test]
    fn schema_errors_have_pointers() {
        let j: Value = serde_json::from_str(r#"{"metric":"geodesic","vertices":[{"id":0},{"id":1}],"edges":[{"u":0,"v":1,"len":"x"}]}"#).unwrap();
        match tree_from_json(&j) {
            Err(IoError::Schema { pointer, .. }) => assert_eq!(pointer, "/edges/0/len"),
            other => panic!("{other:?}"),
        }
        let j = json!({"levels": []});
        assert!(
            matches!(homeo_from_json(&j), Err(IoError::Schema { pointer, .. }) if pointer == "/levels")
        );
    }

    #[test]
    fn subdivision_round_trip() {
        let t = build_jn(4).tree;
        let seq = build_levels(&t, &SubdivisionConfig::new(Rational::new(1, 2), 2)).unwrap();
        let j = subdivision_to_json(&seq);
        let back = subdivision_from_json(&t, &j).unwrap();
        assert_eq!(subdivision_to_json(&back), j);
    }
}
