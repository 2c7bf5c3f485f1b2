//! Binary serialization of the explicit map.
//!
//! The container is a sectioned little-endian format (magic "VRSM"); see
//! docs/map_format.md for the byte-level layout. Unknown section ids are
//! ignored on load, which is also how the oversized control variant with
//! per-keypoint local descriptors stays loadable.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::{ExplicitGeometricMap, MapError, MapPoint3D, ReferenceEntry};
use crate::geometry::{CameraIntrinsics, Se3Pose};

const MAGIC: &[u8; 4] = b"VRSM";
const VERSION: u32 = 1;

const SEC_GLOBAL_DESCRIPTORS: u32 = 1;
const SEC_POINTS: u32 = 2;
const SEC_REFERENCES: u32 = 3;
const SEC_CLUSTERS: u32 = 4;
const SEC_LOCAL_DESCRIPTORS: u32 = 100;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn descriptor_section(map: &ExplicitGeometricMap) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(map.references.len() as u32);
    let dim = map.references.first().map_or(0, |r| r.global_descriptor.len());
    w.u32(dim as u32);
    for r in &map.references {
        for &v in &r.global_descriptor {
            w.f32(v);
        }
    }
    w.buf
}

fn points_section(map: &ExplicitGeometricMap) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(map.points.len() as u32);
    for p in &map.points {
        w.u32(p.id);
        w.f64(p.position.x);
        w.f64(p.position.y);
        w.f64(p.position.z);
        w.u32(p.track.len() as u32);
        for &(r, k) in &p.track {
            w.u32(r);
            w.u32(k);
        }
    }
    w.buf
}

fn references_section(map: &ExplicitGeometricMap) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(map.references.len() as u32);
    for r in &map.references {
        w.u32(r.id);
        w.u32(r.cluster_id);
        w.f64(r.intrinsics.fx);
        w.f64(r.intrinsics.fy);
        w.f64(r.intrinsics.cx);
        w.f64(r.intrinsics.cy);
        w.u32(r.intrinsics.width);
        w.u32(r.intrinsics.height);
        for row in 0..3 {
            for col in 0..3 {
                w.f64(r.pose.rotation[(row, col)]);
            }
        }
        for i in 0..3 {
            w.f64(r.pose.translation[i]);
        }
        w.u32(r.keypoints.len() as u32);
        for (pixel, pid) in &r.keypoints {
            w.f64(pixel.x);
            w.f64(pixel.y);
            w.u32(*pid);
        }
    }
    w.buf
}

fn assemble(sections: Vec<(u32, Vec<u8>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let table_bytes = sections.len() * 20;
    let mut offset = (16 + table_bytes) as u64;
    for (id, payload) in &sections {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.extend_from_slice(payload);
    }
    out
}

/// Serializes the map to its on-disk byte layout.
pub fn save_map_to_vec(map: &ExplicitGeometricMap) -> Vec<u8> {
    let mut clusters = Writer::new();
    clusters.u32(map.cluster_count);
    assemble(vec![
        (SEC_GLOBAL_DESCRIPTORS, descriptor_section(map)),
        (SEC_POINTS, points_section(map)),
        (SEC_REFERENCES, references_section(map)),
        (SEC_CLUSTERS, clusters.buf),
    ])
}

pub fn save_map(map: &ExplicitGeometricMap, path: &Path) -> Result<(), MapError> {
    Ok(std::fs::write(path, save_map_to_vec(map))?)
}

/// Writes the map plus a deterministic filler table of `dim`-dimensional
/// f32 local descriptors, one per keypoint: the storage layout a
/// descriptor-matching pipeline would need. Loads back as the same map
/// (the extra section is ignored).
pub fn save_map_with_local_descriptors(
    map: &ExplicitGeometricMap,
    path: &Path,
    dim: u32,
) -> Result<(), MapError> {
    let n_kps: usize = map.references.iter().map(|r| r.keypoints.len()).sum();
    let mut local = Writer::new();
    local.u32(n_kps as u32);
    local.u32(dim);
    for i in 0..n_kps * dim as usize {
        local.f32((i % 251) as f32 / 251.0);
    }
    let mut clusters = Writer::new();
    clusters.u32(map.cluster_count);
    let bytes = assemble(vec![
        (SEC_GLOBAL_DESCRIPTORS, descriptor_section(map)),
        (SEC_POINTS, points_section(map)),
        (SEC_REFERENCES, references_section(map)),
        (SEC_CLUSTERS, clusters.buf),
        (SEC_LOCAL_DESCRIPTORS, local.buf),
    ]);
    Ok(std::fs::write(path, bytes)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], MapError> {
        if self.pos + n > self.buf.len() {
            return Err(MapError::Truncated {
                expected: (self.pos + n - self.buf.len()) as u64,
                found: 0,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, MapError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MapError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, MapError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn section_slice<'a>(bytes: &'a [u8], offset: u64, length: u64, id: u32) -> Result<&'a [u8], MapError> {
    let end = offset.checked_add(length).ok_or_else(|| {
        MapError::Corrupt(format!("section {id} offset+length overflows"))
    })?;
    if end > bytes.len() as u64 {
        return Err(MapError::Truncated {
            expected: end - bytes.len() as u64,
            found: 0,
        });
    }
    Ok(&bytes[offset as usize..end as usize])
}

pub fn load_map(path: &Path) -> Result<ExplicitGeometricMap, MapError> {
    let bytes = std::fs::read(path)?;
    load_map_from_bytes(&bytes)
}

fn load_map_from_bytes(bytes: &[u8]) -> Result<ExplicitGeometricMap, MapError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(MapError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(MapError::UnsupportedVersion(version));
    }
    let section_count = r.u32()?;
    let _reserved = r.u32()?;
    if section_count as usize * 20 > bytes.len() {
        return Err(MapError::Corrupt(format!(
            "section table claims {section_count} sections in a {}-byte file",
            bytes.len()
        )));
    }
    let mut sections: Vec<(u32, u64, u64)> = Vec::with_capacity(section_count as usize);
    for _ in 0..section_count {
        sections.push((r.u32()?, r.u64()?, r.u64()?));
    }
    let find = |id: u32| -> Result<&[u8], MapError> {
        sections
            .iter()
            .find(|s| s.0 == id)
            .ok_or_else(|| MapError::Corrupt(format!("missing section {id}")))
            .and_then(|&(id, off, len)| section_slice(bytes, off, len, id))
    };

    // Clusters.
    let mut cr = Reader::new(find(SEC_CLUSTERS)?);
    let cluster_count = cr.u32()?;

    // Points.
    let mut pr = Reader::new(find(SEC_POINTS)?);
    let n_points = pr.u32()?;
    let mut points = Vec::new();
    for _ in 0..n_points {
        let id = pr.u32()?;
        let position = Vector3::new(pr.f64()?, pr.f64()?, pr.f64()?);
        let track_len = pr.u32()?;
        let mut track = Vec::new();
        for _ in 0..track_len {
            track.push((pr.u32()?, pr.u32()?));
        }
        points.push(MapPoint3D { id, position, track });
    }

    // References.
    let mut rr = Reader::new(find(SEC_REFERENCES)?);
    let n_refs = rr.u32()?;
    let mut references = Vec::new();
    for _ in 0..n_refs {
        let id = rr.u32()?;
        let cluster_id = rr.u32()?;
        let (fx, fy, cx, cy) = (rr.f64()?, rr.f64()?, rr.f64()?, rr.f64()?);
        let (w, h) = (rr.u32()?, rr.u32()?);
        let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, w, h)
            .map_err(|e| MapError::Corrupt(format!("reference {id}: {e}")))?;
        let mut rot = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                rot[(row, col)] = rr.f64()?;
            }
        }
        let translation = Vector3::new(rr.f64()?, rr.f64()?, rr.f64()?);
        let pose = Se3Pose::new(rot, translation)
            .map_err(|e| MapError::Corrupt(format!("reference {id}: {e}")))?;
        let n_kps = rr.u32()?;
        let mut keypoints = Vec::new();
        for _ in 0..n_kps {
            let pixel = Vector2::new(rr.f64()?, rr.f64()?);
            keypoints.push((pixel, rr.u32()?));
        }
        references.push(ReferenceEntry {
            id,
            pose,
            intrinsics,
            keypoints,
            global_descriptor: Vec::new(),
            cluster_id,
        });
    }

    // Global descriptors, in reference order.
    let mut dr = Reader::new(find(SEC_GLOBAL_DESCRIPTORS)?);
    let n_desc = dr.u32()?;
    let dim = dr.u32()?;
    if n_desc as usize != references.len() {
        return Err(MapError::Corrupt(format!(
            "{n_desc} descriptors for {} references",
            references.len()
        )));
    }
    for r in references.iter_mut() {
        let mut d = Vec::with_capacity(dim as usize);
        for _ in 0..dim {
            d.push(dr.f32()?);
        }
        r.global_descriptor = d;
    }

    Ok(ExplicitGeometricMap {
        points,
        references,
        cluster_count,
    })
}

/// Storage breakdown of a serialized map plus its per-cluster model files.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSizeReport {
    /// Map container bytes minus the global-descriptor section: header,
    /// section table, 3D points, keypoints, poses, cluster table.
    pub geometry_bytes: u64,
    pub global_descriptor_bytes: u64,
    /// (cluster id, model file bytes).
    pub nerf_bytes: Vec<(u32, u64)>,
    pub total_bytes: u64,
}

impl MapSizeReport {
    pub fn nerf_total(&self) -> u64 {
        self.nerf_bytes.iter().map(|&(_, b)| b).sum()
    }
}

impl fmt::Display for MapSizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |b: u64| 100.0 * b as f64 / self.total_bytes.max(1) as f64;
        writeln!(f, "component                     bytes      share")?;
        writeln!(
            f,
            "points+keypoints    {:>15}    {:>6.2}%",
            self.geometry_bytes,
            pct(self.geometry_bytes)
        )?;
        writeln!(
            f,
            "global descriptors  {:>15}    {:>6.2}%",
            self.global_descriptor_bytes,
            pct(self.global_descriptor_bytes)
        )?;
        for &(cluster, bytes) in &self.nerf_bytes {
            writeln!(f, "nerf cluster {cluster:<3}    {:>15}    {:>6.2}%", bytes, pct(bytes))?;
        }
        write!(f, "total               {:>15}    100.00%", self.total_bytes)
    }
}

/// Prices each storage component. Byte accounting is exact: the component
/// bytes sum to `total_bytes` with no double counting.
pub fn map_size_report(
    map: &ExplicitGeometricMap,
    nerf_paths: &[(u32, std::path::PathBuf)],
) -> Result<MapSizeReport, MapError> {
    let bytes = save_map_to_vec(map);
    let desc_len = descriptor_section(map).len() as u64;
    let mut nerf_bytes = Vec::new();
    for (cluster, path) in nerf_paths {
        nerf_bytes.push((*cluster, std::fs::metadata(path)?.len()));
    }
    let nerf_total: u64 = nerf_bytes.iter().map(|&(_, b)| b).sum();
    Ok(MapSizeReport {
        geometry_bytes: bytes.len() as u64 - desc_len,
        global_descriptor_bytes: desc_len,
        nerf_bytes,
        total_bytes: bytes.len() as u64 + nerf_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::GLOBAL_DESCRIPTOR_DIM;

    fn tiny_map() -> ExplicitGeometricMap {
        let intr = CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
        let pose_a = Se3Pose::identity();
        let pose_b = Se3Pose::look_at(
            Vector3::new(0.3, 0.2, -1.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let mut d0 = vec![0.0f32; GLOBAL_DESCRIPTOR_DIM];
        d0[0] = 1.0;
        let mut d1 = vec![0.0f32; GLOBAL_DESCRIPTOR_DIM];
        d1[3] = 1.0;
        ExplicitGeometricMap {
            points: vec![
                MapPoint3D {
                    id: 0,
                    position: Vector3::new(0.1, -0.2, 2.0),
                    track: vec![(0, 0), (1, 0)],
                },
                MapPoint3D {
                    id: 1,
                    position: Vector3::new(-0.4, 0.1, 2.5),
                    track: vec![(0, 1), (1, 1)],
                },
            ],
            references: vec![
                ReferenceEntry {
                    id: 0,
                    pose: pose_a,
                    intrinsics: intr,
                    keypoints: vec![
                        (Vector2::new(37.0, 22.5), 0),
                        (Vector2::new(12.5, 36.0), 1),
                    ],
                    global_descriptor: d0,
                    cluster_id: 0,
                },
                ReferenceEntry {
                    id: 1,
                    pose: pose_b,
                    intrinsics: intr,
                    keypoints: vec![
                        (Vector2::new(30.5, 28.5), 0),
                        (Vector2::new(18.5, 40.5), 1),
                    ],
                    global_descriptor: d1,
                    cluster_id: 1,
                },
            ],
            cluster_count: 2,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let map = tiny_map();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.vrsm");
        save_map(&map, &path).unwrap();
        let loaded = load_map(&path).unwrap();
        assert_eq!(map, loaded);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let map = tiny_map();
        let mut bytes = save_map_to_vec(&map);
        bytes[0] = b'X';
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vrsm");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_map(&path), Err(MapError::BadMagic)));
    }

    #[test]
    fn future_version_is_rejected() {
        let map = tiny_map();
        let mut bytes = save_map_to_vec(&map);
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.vrsm");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_map(&path), Err(MapError::UnsupportedVersion(9))));
    }

    #[test]
    fn truncation_is_a_structured_error() {
        let map = tiny_map();
        let bytes = save_map_to_vec(&map);
        let dir = tempfile::tempdir().unwrap();
        for cut in [10, 40, bytes.len() - 7] {
            let path = dir.path().join(format!("cut{cut}.vrsm"));
            std::fs::write(&path, &bytes[..cut]).unwrap();
            match load_map(&path) {
                Err(MapError::Truncated { .. } | MapError::Corrupt(_)) => {}
                other => panic!("cut at {cut}: expected truncation error, got {other:?}"),
            }
        }
    }

    #[test]
    fn corrupt_rotation_is_rejected() {
        let map = tiny_map();
        let mut bytes = save_map_to_vec(&map);
        // Scribble over the middle of the references section.
        let len = bytes.len();
        for b in bytes[len - 120..len - 80].iter_mut() {
            *b = 0xAB;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scribbled.vrsm");
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_map(&path).is_err());
    }

    #[test]
    fn control_variant_is_larger_but_equivalent() {
        let map = tiny_map();
        let dir = tempfile::tempdir().unwrap();
        let lean = dir.path().join("lean.vrsm");
        let fat = dir.path().join("fat.vrsm");
        save_map(&map, &lean).unwrap();
        save_map_with_local_descriptors(&map, &fat, 128).unwrap();
        let lean_len = std::fs::metadata(&lean).unwrap().len();
        let fat_len = std::fs::metadata(&fat).unwrap().len();
        let n_kps: u64 = map.references.iter().map(|r| r.keypoints.len() as u64).sum();
        assert!(fat_len >= lean_len + n_kps * 128 * 4);
        assert_eq!(load_map(&fat).unwrap(), map);
    }

    #[test]
    fn size_report_accounts_every_byte() {
        let map = tiny_map();
        let dir = tempfile::tempdir().unwrap();
        let nerf_a = dir.path().join("c0.vrsn");
        let nerf_b = dir.path().join("c1.vrsn");
        std::fs::write(&nerf_a, vec![0u8; 1000]).unwrap();
        std::fs::write(&nerf_b, vec![0u8; 1500]).unwrap();
        let report = map_size_report(&map, &[(0, nerf_a), (1, nerf_b)]).unwrap();
        assert_eq!(report.nerf_total(), 2500);
        assert_eq!(
            report.geometry_bytes + report.global_descriptor_bytes + report.nerf_total(),
            report.total_bytes
        );
        let file_len = save_map_to_vec(&map).len() as u64;
        assert_eq!(report.total_bytes, file_len + 2500);
    }
}
