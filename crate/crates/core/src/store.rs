//! Embedding corpora: manifest + NPY interchange format and fused datasets.
//!
//! A corpus directory holds a `manifest.json` and, per utterance, a content
//! matrix `[n_frames × d_c]` and a speaker vector `[d_s]` as float32 NPY files.
//! Fused feature rows place the speaker dims first: indices `[0, d_s)` hold the
//! speaker embedding and `[d_s, d_s + d_c)` the frame-averaged content.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterBlock;
use crate::npy;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub utterance_id: String,
    pub speaker_label: usize,
    pub content_path: PathBuf,
    pub speaker_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_name: String,
    pub model_id: String,
    /// Encoder layer that produced the content embeddings.
    pub layer: i64,
    pub d_c: usize,
    pub d_s: usize,
    pub utterances: Vec<UtteranceEntry>,
    /// Present on corpora produced by a timbre filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterBlock>,
    /// Directory the relative array paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_label: usize,
    pub content: Array2<f32>,
    pub speaker: Array1<f32>,
}

/// Speaker-classification dataset of fused `[speaker; content_mean]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub d_s: usize,
    pub d_c: usize,
}

impl Manifest {
    pub fn n_speakers(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.speaker_label + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn content_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.utterances[i].content_path)
    }

    pub fn speaker_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.utterances[i].speaker_path)
    }

    /// Checks the structural invariants that do not need the array files.
    pub fn validate_structure(&self) -> Result<()> {
        if self.d_c == 0 || self.d_s == 0 {
            return Err(Error::InvalidManifest("d_c and d_s must be positive".into()));
        }
        if self.utterances.is_empty() {
            return Err(Error::InvalidManifest("no utterances".into()));
        }
        let mut seen = HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate utterance_id {}",
                    u.utterance_id
                )));
            }
        }
        let n = self.n_speakers();
        let mut present = vec![false; n];
        for u in &self.utterances {
            present[u.speaker_label] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::InvalidManifest(format!(
                "speaker label {missing} has no utterances (labels must cover 0..{n})"
            )));
        }
        Ok(())
    }

    /// Checks every referenced array exists and its header agrees with `d_c`/`d_s`.
    pub fn validate_arrays(&self) -> Result<()> {
        for (i, u) in self.utterances.iter().enumerate() {
            let content = self.content_path(i);
            match npy::read_shape(&content)?.as_slice() {
                &[frames, width] => {
                    if width != self.d_c {
                        return Err(Error::mismatch(
                            format!("content array {}", content.display()),
                            format!("width d_c={}", self.d_c),
                            width,
                        ));
                    }
                    if frames == 0 {
                        return Err(Error::Empty("content matrix has no frames"));
                    }
                }
                other => {
                    return Err(Error::mismatch(
                        format!("content array {}", content.display()),
                        "shape (n_frames, d_c)",
                        format!("{other:?}"),
                    ))
                }
            }
            let speaker = self.speaker_path(i);
            let shape = npy::read_shape(&speaker)?;
            if shape != [self.d_s] {
                return Err(Error::mismatch(
                    format!("speaker array for {}", u.utterance_id),
                    format!("shape ({},)", self.d_s),
                    format!("{shape:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Loads and validates one utterance's arrays.
    pub fn load_record(&self, i: usize) -> Result<UtteranceRecord> {
        let u = &self.utterances[i];
        let content = npy::read_matrix(&self.content_path(i))?;
        let speaker = npy::read_vector(&self.speaker_path(i))?;
        if content.ncols() != self.d_c {
            return Err(Error::mismatch(
                format!("content array for {}", u.utterance_id),
                self.d_c,
                content.ncols(),
            ));
        }
        if speaker.len() != self.d_s {
            return Err(Error::mismatch(
                format!("speaker array for {}", u.utterance_id),
                self.d_s,
                speaker.len(),
            ));
        }
        if content.nrows() == 0 {
            return Err(Error::Empty("content matrix has no frames"));
        }
        if !content.iter().chain(speaker.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("utterance {}", u.utterance_id)));
        }
        Ok(UtteranceRecord {
            utterance_id: u.utterance_id.clone(),
            speaker_label: u.speaker_label,
            content,
            speaker,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parses a manifest and validates it against the array files it references.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate_structure()?;
    manifest.validate_arrays()?;
    Ok(manifest)
}

/// Per-column arithmetic mean over frames.
pub fn frame_average(content: ArrayView2<'_, f32>) -> Result<Array1<f64>> {
    let n_frames = content.nrows();
    if n_frames == 0 {
        return Err(Error::Empty("content matrix has no frames"));
    }
    let mut sum = Array1::<f64>::zeros(content.ncols());
    for row in content.rows() {
        for (acc, &v) in sum.iter_mut().zip(row.iter()) {
            *acc += v as f64;
        }
    }
    Ok(sum / n_frames as f64)
}

/// Concatenates a speaker embedding and a frame-averaged content vector.
pub fn fuse_sample(
    speaker: ArrayView1<'_, f32>,
    content_mean: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if speaker.is_empty() {
        return Err(Error::Empty("speaker embedding"));
    }
    if content_mean.is_empty() {
        return Err(Error::Empty("content embedding"));
    }
    let d_s = speaker.len();
    let mut out = Array1::zeros(d_s + content_mean.len());
    for (o, &v) in out.iter_mut().zip(speaker.iter()) {
        *o = v as f64;
    }
    out.slice_mut(s![d_s..]).assign(&content_mean);
    Ok(out)
}

/// One fused row per utterance, in manifest order.
pub fn build_fused_dataset(manifest: &Manifest) -> Result<FusedDataset> {
    let n = manifest.utterances.len();
    if n == 0 {
        return Err(Error::Empty("manifest has no utterances"));
    }
    let d_in = manifest.d_s + manifest.d_c;
    let mut features = Array2::zeros((n, d_in));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let record = manifest.load_record(i)?;
        let mean = frame_average(record.content.view())?;
        let row = fuse_sample(record.speaker.view(), mean.view())?;
        if row.len() != d_in {
            return Err(Error::mismatch("fused row", d_in, row.len()));
        }
        features.row_mut(i).assign(&row);
        labels.push(record.speaker_label);
    }
    FusedDataset::new(features, labels, manifest.d_s, manifest.d_c)
}

impl FusedDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, d_s: usize, d_c: usize) -> Result<Self> {
        if features.ncols() != d_s + d_c {
            return Err(Error::mismatch("fused features", d_s + d_c, features.ncols()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::mismatch("label count", features.nrows(), labels.len()));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("fused features".into()));
        }
        Ok(Self {
            features,
            labels,
            d_s,
            d_c,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.d_s + self.d_c
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().map(|l| l + 1).max().unwrap_or(0)
    }

    pub fn speaker_range(&self) -> Range<usize> {
        0..self.d_s
    }

    pub fn content_range(&self) -> Range<usize> {
        self.d_s..self.d_s + self.d_c
    }

    /// Splits row `i` back into its speaker and content-mean parts.
    pub fn split_row(&self, i: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        let row = self.features.row(i);
        (
            row.slice_move(s![..self.d_s]),
            self.features.slice(s![i, self.d_s..]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn write_corpus(dir: &Path, d_c: usize, d_s: usize, content_width: usize) -> PathBuf {
        fs::create_dir_all(dir.join("c")).unwrap();
        fs::create_dir_all(dir.join("s")).unwrap();
        let mut utterances = Vec::new();
        for i in 0..2 {
            let content = Array2::from_shape_fn((3, content_width), |(f, j)| (i + f + j) as f32);
            let speaker = Array1::from_shape_fn(d_s, |j| (i * 10 + j) as f32);
            let cp = PathBuf::from(format!("c/u{i}.npy"));
            let sp = PathBuf::from(format!("s/u{i}.npy"));
            npy::write_matrix(&dir.join(&cp), content.view()).unwrap();
            npy::write_vector(&dir.join(&sp), speaker.as_slice().unwrap()).unwrap();
            utterances.push(UtteranceEntry {
                utterance_id: format!("u{i}"),
                speaker_label: i,
                content_path: cp,
                speaker_path: sp,
            });
        }
        let manifest = Manifest {
            corpus_name: "tiny".into(),
            model_id: "test".into(),
            layer: 1,
            d_c,
            d_s,
            utterances,
            filter: None,
            root: PathBuf::new(),
        };
        manifest.save(dir).unwrap()
    }

    #[test]
    fn loads_minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), 4, 2, 4);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.utterances.len(), 2);
        assert_eq!(m.n_speakers(), 2);
        let ds = build_fused_dataset(&m).unwrap();
        assert_eq!(ds.features.dim(), (2, 6));
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn missing_array_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), 4, 2, 4);
        fs::remove_file(dir.path().join("s/u1.npy")).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("missing array"), "{err}");
    }

    #[test]
    fn width_disagreeing_with_manifest_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), 4, 2, 5);
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn rejects_label_gaps_and_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), 4, 2, 4);
        let mut m = load_manifest(&path).unwrap();
        m.utterances[1].speaker_label = 2;
        assert!(m.validate_structure().is_err());
        m.utterances[1].speaker_label = 1;
        m.utterances[1].utterance_id = "u0".into();
        assert!(m.validate_structure().is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(dir.path(), 4, 2, 4);
        let mut bad = Array2::<f32>::zeros((2, 4));
        bad[[1, 3]] = f32::NAN;
        npy::write_matrix(&dir.path().join("c/u0.npy"), bad.view()).unwrap();
        let m = load_manifest(&path).unwrap();
        assert!(matches!(build_fused_dataset(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn malformed_manifest_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn frame_average_examples() {
        let m = array![[1.0f32, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert_eq!(frame_average(m.view()).unwrap(), array![1.0, 2.0]);
        let m = array![[0.0f32, 2.0], [2.0, 0.0]];
        assert_eq!(frame_average(m.view()).unwrap(), array![1.0, 1.0]);
        let empty = Array2::<f32>::zeros((0, 3));
        assert!(frame_average(empty.view()).is_err());
    }

    #[test]
    fn fuse_sample_examples() {
        let fused = fuse_sample(array![1.0f32, 2.0].view(), array![3.0, 4.0, 5.0].view()).unwrap();
        assert_eq!(fused, array![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(fuse_sample(Array1::<f32>::zeros(0).view(), array![1.0].view()).is_err());
        let big = fuse_sample(Array1::<f32>::zeros(192).view(), Array1::zeros(1024).view()).unwrap();
        assert_eq!(big.len(), 1216);
    }

    #[test]
    fn constant_frames_end_the_fused_row() {
        let content = Array2::from_elem((7, 3), 0.25f32);
        let mean = frame_average(content.view()).unwrap();
        let row = fuse_sample(array![9.0f32, 8.0].view(), mean.view()).unwrap();
        assert_eq!(row.slice(s![2..]), array![0.25, 0.25, 0.25]);
    }

    proptest! {
        #[test]
        fn frame_average_is_permutation_invariant(
            vals in proptest::collection::vec(-8i32..8, 12),
            rot in 0usize..4,
        ) {
            let m = Array2::from_shape_fn((4, 3), |(f, j)| vals[f * 3 + j] as f32 * 0.5);
            let permuted = Array2::from_shape_fn((4, 3), |(f, j)| m[[(f + rot) % 4, j]]);
            prop_assert_eq!(frame_average(m.view()).unwrap(), frame_average(permuted.view()).unwrap());
        }

        #[test]
        fn fuse_sample_is_injective(
            a in proptest::collection::vec(-4i32..4, 5),
            b in proptest::collection::vec(-4i32..4, 5),
        ) {
            let split = |v: &[i32]| {
                let sp: Array1<f32> = v[..2].iter().map(|&x| x as f32).collect();
                let ct: Array1<f64> = v[2..].iter().map(|&x| x as f64).collect();
                fuse_sample(sp.view(), ct.view()).unwrap()
            };
            prop_assert_eq!(a == b, split(&a) == split(&b));
        }
    }
}
