//! Directed road network over segments.
//!
//! Segments are the edges of the graph. Degrees are edge-adjacency degrees:
//! the out degree of a segment counts the segments that can follow it (those
//! starting at its end vertex), the in degree counts the segments that can
//! precede it (those ending at its start vertex).

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a segment inside one [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

impl SegmentId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    id: String,
    from: String,
    to: String,
    length: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    vertices: Vec<Vertex>,
    segments: Vec<SegmentRecord>,
}

/// Immutable directed road network with successor/predecessor indices.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    vertices: Vec<Vertex>,
    segments: Vec<Segment>,
    vertex_index: HashMap<String, usize>,
    segment_index: HashMap<String, SegmentId>,
    // vertex -> segments starting / ending there
    outgoing: Vec<Vec<SegmentId>>,
    incoming: Vec<Vec<SegmentId>>,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.segments == other.segments
    }
}

impl RoadNetwork {
    /// Builds a network from vertex records and `(id, from, to, length)`
    /// segment records that reference vertices by id.
    pub fn from_records<S: AsRef<str>>(
        vertices: Vec<Vertex>,
        segments: impl IntoIterator<Item = (S, S, S, f64)>,
    ) -> Result<Self> {
        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if vertex_index.insert(v.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vertex id {:?}", v.id)));
            }
        }

        let mut segs = Vec::new();
        let mut segment_index = HashMap::new();
        for (id, from, to, length) in segments {
            let (id, from, to) = (id.as_ref(), from.as_ref(), to.as_ref());
            let lookup = |v: &str| {
                vertex_index.get(v).copied().ok_or_else(|| {
                    Error::Validation(format!("segment {id:?} references missing vertex {v:?}"))
                })
            };
            let (from, to) = (lookup(from)?, lookup(to)?);
            if !length.is_finite() || length < 0.0 {
                return Err(Error::Validation(format!(
                    "segment {id:?} has invalid length {length}"
                )));
            }
            let sid = SegmentId(segs.len() as u32);
            if segment_index.insert(id.to_string(), sid).is_some() {
                return Err(Error::Validation(format!("duplicate segment id {id:?}")));
            }
            segs.push(Segment {
                id: id.to_string(),
                from,
                to,
                length,
            });
        }

        let mut net = RoadNetwork {
            vertices,
            segments: segs,
            vertex_index,
            segment_index,
            outgoing: Vec::new(),
            incoming: Vec::new(),
        };
        net.rebuild_indices();
        Ok(net)
    }

    fn rebuild_indices(&mut self) {
        let mut outgoing = vec![Vec::new(); self.vertices.len()];
        let mut incoming = vec![Vec::new(); self.vertices.len()];
        for (i, s) in self.segments.iter().enumerate() {
            outgoing[s.from].push(SegmentId(i as u32));
            incoming[s.to].push(SegmentId(i as u32));
        }
        self.outgoing = outgoing;
        self.incoming = incoming;
    }

    /// Parses the JSON network file format.
    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: NetworkFile = serde_json::from_reader(reader).map_err(|e| Error::parse(&e, 0))?;
        Self::from_records(
            file.vertices,
            file.segments
                .into_iter()
                .map(|s| (s.id, s.from, s.to, s.length)),
        )
    }

    pub fn load_str(text: &str) -> Result<Self> {
        Self::load(text.as_bytes())
    }

    /// Writes the network file format. Output is deterministic.
    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        // one record per line keeps diffs of generated worlds readable
        let mut out = String::from("{\"vertices\": [\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let sep = if i + 1 < self.vertices.len() { "," } else { "" };
            out.push_str(&format!(
                "  {}{}\n",
                serde_json::to_string(v).expect("vertex serializes"),
                sep
            ));
        }
        out.push_str("], \"segments\": [\n");
        for (i, s) in self.segments.iter().enumerate() {
            let rec = SegmentRecord {
                id: s.id.clone(),
                from: self.vertices[s.from].id.clone(),
                to: self.vertices[s.to].id.clone(),
                length: s.length,
            };
            let sep = if i + 1 < self.segments.len() { "," } else { "" };
            out.push_str(&format!(
                "  {}{}\n",
                serde_json::to_string(&rec).expect("segment serializes"),
                sep
            ));
        }
        out.push_str("]}\n");
        out
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn segments(&self) -> impl Iterator<Item = (SegmentId, &Segment)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| (SegmentId(i as u32), s))
    }

    pub fn segment(&self, e: SegmentId) -> Result<&Segment> {
        self.segments
            .get(e.index())
            .ok_or_else(|| Error::NotFound(format!("segment {e}")))
    }

    pub fn segment_id(&self, id: &str) -> Result<SegmentId> {
        self.segment_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("segment {id:?}")))
    }

    pub fn segment_name(&self, e: SegmentId) -> Result<&str> {
        Ok(&self.segment(e)?.id)
    }

    pub fn vertex_id(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    /// Segments that can directly follow `e`.
    pub fn successors(&self, e: SegmentId) -> Result<&[SegmentId]> {
        let s = self.segment(e)?;
        Ok(&self.outgoing[s.to])
    }

    /// Segments that can directly precede `e`.
    pub fn predecessors(&self, e: SegmentId) -> Result<&[SegmentId]> {
        let s = self.segment(e)?;
        Ok(&self.incoming[s.from])
    }

    /// Segments leaving a vertex.
    pub fn outgoing(&self, vertex: usize) -> &[SegmentId] {
        &self.outgoing[vertex]
    }

    pub fn out_degree(&self, e: SegmentId) -> Result<usize> {
        self.successors(e).map(<[_]>::len)
    }

    pub fn in_degree(&self, e: SegmentId) -> Result<usize> {
        self.predecessors(e).map(<[_]>::len)
    }

    /// True iff `second` can be traversed right after `first`.
    pub fn is_adjacent(&self, first: SegmentId, second: SegmentId) -> Result<bool> {
        Ok(self.segment(first)?.to == self.segment(second)?.from)
    }
}
