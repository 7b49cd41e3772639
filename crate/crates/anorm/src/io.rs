//! On-disk formats: the tensor data file (key-value header plus flat
//! payload) and chain artifacts (saved states, scalar traces, metadata).

use crate::array_normal::SeparableCovariance;
use crate::bayes::{Chain, ChainMeta, GibbsState};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::tensor::DenseArray;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};
use std::path::Path;

const MAGIC: &str = "anorm-tensor v1";

/// A dense array with mode names, as stored on disk. The payload is flat
/// in storage order (lower modes fastest); `NA` marks a missing cell in
/// the text payload, a NaN in the binary one.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub array: DenseArray,
    pub mode_names: Vec<String>,
    /// Packed little-endian f64 payload instead of one value per line.
    pub binary: bool,
}

impl TensorFile {
    pub fn new(array: DenseArray, mode_names: Vec<String>) -> Result<Self> {
        if mode_names.len() != array.order() {
            return Err(Error::Data(format!(
                "{} mode names for an order-{} array",
                mode_names.len(),
                array.order()
            )));
        }
        if mode_names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
            return Err(Error::Data("mode names must be non-empty and whitespace-free".into()));
        }
        Ok(TensorFile { array, mode_names, binary: false })
    }

    pub fn with_default_names(array: DenseArray) -> Self {
        let names = (1..=array.order()).map(|k| format!("mode{k}")).collect();
        TensorFile { array, mode_names: names, binary: false }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let dims: Vec<String> = self.array.dims().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "dims: {}", dims.join(" ")).unwrap();
        writeln!(out, "modes: {}", self.mode_names.join(" ")).unwrap();
        writeln!(out, "missing: {}", self.array.missing_count()).unwrap();
        writeln!(out, "payload: {}", if self.binary { "binary" } else { "text" }).unwrap();
        writeln!(out, "---").unwrap();
        if self.binary {
            for (p, &v) in self.array.data().iter().enumerate() {
                let v = if self.array.mask().is_some_and(|m| m[p]) { f64::NAN } else { v };
                out.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            for (p, &v) in self.array.data().iter().enumerate() {
                if self.array.mask().is_some_and(|m| m[p]) {
                    writeln!(out, "NA").unwrap();
                } else {
                    writeln!(out, "{v}").unwrap();
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = std::io::BufReader::new(bytes);
        let mut line = String::new();
        let mut read_line = |reader: &mut std::io::BufReader<&[u8]>| -> Result<String> {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Data("truncated tensor file header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if read_line(&mut reader)? != MAGIC {
            return Err(Error::Data(format!("not a tensor file (expected `{MAGIC}` header)")));
        }
        let mut dims: Option<Vec<usize>> = None;
        let mut modes: Option<Vec<String>> = None;
        let mut missing: Option<usize> = None;
        let mut binary = false;
        loop {
            let l = read_line(&mut reader)?;
            if l == "---" {
                break;
            }
            let (key, value) = l
                .split_once(": ")
                .ok_or_else(|| Error::Data(format!("malformed header line `{l}`")))?;
            match key {
                "dims" => {
                    dims = Some(
                        value
                            .split_whitespace()
                            .map(|t| {
                                t.parse::<usize>()
                                    .map_err(|_| Error::Data(format!("bad dimension `{t}`")))
                            })
                            .collect::<Result<_>>()?,
                    )
                }
                "modes" => modes = Some(value.split_whitespace().map(String::from).collect()),
                "missing" => {
                    missing = Some(
                        value
                            .parse()
                            .map_err(|_| Error::Data(format!("bad missing count `{value}`")))?,
                    )
                }
                "payload" => match value {
                    "text" => binary = false,
                    "binary" => binary = true,
                    other => return Err(Error::Data(format!("unknown payload kind `{other}`"))),
                },
                other => return Err(Error::Data(format!("unknown header key `{other}`"))),
            }
        }
        let dims = dims.ok_or_else(|| Error::Data("header is missing `dims`".into()))?;
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Data(format!("invalid dims {dims:?}")));
        }
        let len: usize = dims.iter().product();
        let mode_names = modes
            .unwrap_or_else(|| (1..=dims.len()).map(|k| format!("mode{k}")).collect());
        if mode_names.len() != dims.len() {
            return Err(Error::Data(format!(
                "{} mode names for {} dims",
                mode_names.len(),
                dims.len()
            )));
        }
        let mut data = Vec::with_capacity(len);
        let mut mask = vec![false; len];
        if binary {
            let mut payload = Vec::new();
            reader.read_to_end(&mut payload)?;
            if payload.len() != len * 8 {
                return Err(Error::Data(format!(
                    "binary payload holds {} bytes, expected {}",
                    payload.len(),
                    len * 8
                )));
            }
            for (p, chunk) in payload.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                if v.is_nan() {
                    mask[p] = true;
                    data.push(f64::NAN);
                } else {
                    data.push(v);
                }
            }
        } else {
            for (p, l) in reader.lines().enumerate() {
                let l = l?;
                if p >= len {
                    return Err(Error::Data(format!("payload longer than {len} cells")));
                }
                if l == "NA" {
                    mask[p] = true;
                    data.push(f64::NAN);
                } else {
                    let v: f64 = l
                        .parse()
                        .map_err(|_| Error::Data(format!("bad value `{l}` at cell {p}")))?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!("non-finite value at cell {p}")));
                    }
                    data.push(v);
                }
            }
        }
        if data.len() != len {
            return Err(Error::Data(format!(
                "payload holds {} cells, dims require {len}",
                data.len()
            )));
        }
        let n_missing = mask.iter().filter(|&&b| b).count();
        if let Some(claimed) = missing {
            if claimed != n_missing {
                return Err(Error::Data(format!(
                    "header claims {claimed} missing cells, payload has {n_missing}"
                )));
            }
        }
        let mut array = DenseArray::new(dims, data)?;
        if n_missing > 0 {
            array = array.with_mask(mask)?;
        }
        Ok(TensorFile { array, mode_names, binary })
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Data("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// One saved state as stored in `states.json`. Identity-constrained modes
/// carry no matrix.
#[derive(Debug, Serialize, Deserialize)]
pub struct StateRecord {
    pub iter: usize,
    pub gamma: f64,
    pub mean_dims: Vec<usize>,
    pub mean: Vec<f64>,
    pub comps: Vec<Option<Vec<Vec<f64>>>>,
    pub imputed: Vec<f64>,
}

/// `meta.json` contents: sampler metadata plus provenance of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(flatten)]
    pub chain: ChainMeta,
    pub mode_names: Vec<String>,
    pub config_hash: String,
}

/// Write chain artifacts into `dir`: `meta.json`, `states.json`,
/// `trace.csv` and `ess.csv`.
pub fn write_chain(dir: &Path, chain: &Chain, mode_names: &[String], config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = RunMeta {
        chain: chain.meta.clone(),
        mode_names: mode_names.to_vec(),
        config_hash: config_hash.to_string(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta).map_err(json_err)?)?;

    let records: Vec<StateRecord> = chain
        .states
        .iter()
        .map(|s| StateRecord {
            iter: s.iter,
            gamma: s.gamma,
            mean_dims: s.m.dims().to_vec(),
            mean: s.m.data().to_vec(),
            comps: s
                .sigma
                .comps()
                .iter()
                .zip(s.sigma.identity_flags())
                .map(|(c, &id)| if id { None } else { Some(matrix_rows(c.values())) })
                .collect(),
            imputed: s.imputed.clone(),
        })
        .collect();
    std::fs::write(
        dir.join("states.json"),
        serde_json::to_vec(&records).map_err(json_err)?,
    )?;

    let estimated: Vec<usize> = (0..chain.gamma_traces.len())
        .filter(|&k| !chain.meta.identity_flags[k])
        .collect();
    let mut trace = String::from("iter,gamma0");
    for &k in &estimated {
        trace.push_str(&format!(",gamma{}", k + 1));
    }
    trace.push_str(",loglik\n");
    for (i, state) in chain.states.iter().enumerate() {
        trace.push_str(&format!("{},{}", state.iter, chain.gamma0_trace[i]));
        for &k in &estimated {
            trace.push_str(&format!(",{}", chain.gamma_traces[k][i]));
        }
        trace.push_str(&format!(",{}\n", chain.loglik_trace[i]));
    }
    std::fs::write(dir.join("trace.csv"), trace)?;

    let mut ess_table = String::from("parameter,ess\n");
    let mut push_row = |name: &str, xs: &[f64]| {
        let value = match crate::diagnostics::ess(xs) {
            Ok(v) => format!("{v}"),
            Err(_) => "NA".to_string(),
        };
        ess_table.push_str(&format!("{name},{value}\n"));
    };
    push_row("gamma0", &chain.gamma0_trace);
    for &k in &estimated {
        push_row(&format!("gamma{}", k + 1), &chain.gamma_traces[k]);
    }
    push_row("loglik", &chain.loglik_trace);
    std::fs::write(dir.join("ess.csv"), ess_table)?;
    Ok(())
}

/// Rebuild a chain from artifacts written by [`write_chain`].
pub fn read_chain(dir: &Path) -> Result<(Chain, RunMeta)> {
    let meta: RunMeta =
        serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?).map_err(json_err)?;
    let records: Vec<StateRecord> =
        serde_json::from_slice(&std::fs::read(dir.join("states.json"))?).map_err(json_err)?;
    let cov_modes = meta.chain.identity_flags.len();
    let cov_dims: Vec<usize> = meta.chain.dims[..cov_modes].to_vec();
    let mut states = Vec::with_capacity(records.len());
    let mut gamma0_trace = Vec::new();
    let mut gamma_traces = vec![Vec::new(); cov_modes];
    for r in records {
        let mut comps = Vec::with_capacity(cov_modes);
        for (k, c) in r.comps.iter().enumerate() {
            match c {
                Some(rows) => comps.push(SpdMatrix::new(rows_matrix(rows)?)?),
                None => comps.push(SpdMatrix::identity(cov_dims[k])),
            }
        }
        let sigma = SeparableCovariance::with_flags(comps, meta.chain.identity_flags.clone())?;
        gamma0_trace.push(sigma.trace_product());
        for (k, t) in gamma_traces.iter_mut().enumerate() {
            t.push(sigma.comp(k).trace());
        }
        states.push(GibbsState {
            m: DenseArray::new(r.mean_dims, r.mean)?,
            sigma,
            gamma: r.gamma,
            imputed: r.imputed,
            iter: r.iter,
        });
    }
    // the log-likelihood trace lives only in trace.csv; reload it
    let trace = std::fs::read_to_string(dir.join("trace.csv"))?;
    let mut loglik_trace = Vec::new();
    for l in trace.lines().skip(1) {
        let last = l
            .rsplit(',')
            .next()
            .ok_or_else(|| Error::Data("empty trace row".into()))?;
        loglik_trace.push(
            last.parse()
                .map_err(|_| Error::Data(format!("bad loglik value `{last}`")))?,
        );
    }
    if loglik_trace.len() != states.len() {
        return Err(Error::Data(format!(
            "trace.csv has {} rows for {} states",
            loglik_trace.len(),
            states.len()
        )));
    }
    let chain = Chain {
        states,
        gamma0_trace,
        gamma_traces,
        loglik_trace,
        meta: meta.chain.clone(),
    };
    Ok((chain, meta))
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Data(format!("json: {e}"))
}

/// Serializable matrix helper used by reports and truth records.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    matrix_rows(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> TensorFile {
        let array = DenseArray::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, f64::NAN, 7.0])
            .unwrap()
            .with_mask(vec![false, false, false, false, true, false])
            .unwrap();
        TensorFile::new(array, vec!["rows".into(), "cols".into()]).unwrap()
    }

    #[test]
    fn text_round_trip_is_byte_identical() {
        let f = sample_file();
        let bytes = f.to_bytes();
        let parsed = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(parsed.to_bytes(), bytes);
        assert_eq!(parsed.array.missing_count(), 1);
        assert_eq!(parsed.mode_names, f.mode_names);
    }

    #[test]
    fn binary_round_trip_preserves_values() {
        let mut f = sample_file();
        f.binary = true;
        let bytes = f.to_bytes();
        let parsed = TensorFile::from_bytes(&bytes).unwrap();
        assert_eq!(parsed.to_bytes(), bytes);
        for (a, b) in parsed.array.data().iter().zip(f.array.data()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn header_missing_count_is_checked() {
        let bytes = sample_file().to_bytes();
        let s = String::from_utf8(bytes).unwrap().replace("missing: 1", "missing: 3");
        assert!(matches!(TensorFile::from_bytes(s.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn payload_length_is_checked() {
        let bytes = sample_file().to_bytes();
        let mut s = String::from_utf8(bytes).unwrap();
        s.push_str("4.0\n");
        assert!(TensorFile::from_bytes(s.as_bytes()).is_err());
    }

    #[test]
    fn rejects_unknown_header_and_bad_magic() {
        assert!(TensorFile::from_bytes(b"something else\n").is_err());
        let s = String::from_utf8(sample_file().to_bytes())
            .unwrap()
            .replace("payload: text", "flavor: mint");
        assert!(TensorFile::from_bytes(s.as_bytes()).is_err());
    }

    #[test]
    fn chain_round_trip() {
        use crate::array_normal::ArrayNormal;
        use crate::bayes::{run_gibbs, GammaPrior, GibbsConfig, PriorSpec};
        use crate::linalg::RngStream;
        let mut rng = RngStream::new(90);
        let dims = [2usize, 3];
        let dist = ArrayNormal::standard(&dims);
        let ys = DenseArray::stack(&(0..5).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>())
            .unwrap();
        let prior = PriorSpec::defaults(
            &dims,
            &dims,
            vec![true, false],
            GammaPrior::Fixed { value: 1.0 },
        )
        .unwrap();
        let cfg = GibbsConfig { n_iters: 30, burn_in: 10, thin: 2, seed: 9, ..Default::default() };
        let chain = run_gibbs(&ys, &prior, &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("anorm-io-test-{}", std::process::id()));
        let names = vec!["a".to_string(), "b".to_string(), "rep".to_string()];
        write_chain(&dir, &chain, &names, "deadbeef").unwrap();
        let (back, meta) = read_chain(&dir).unwrap();
        assert_eq!(meta.mode_names, names);
        assert_eq!(meta.config_hash, "deadbeef");
        assert_eq!(back.states.len(), chain.states.len());
        assert_eq!(back.gamma0_trace, chain.gamma0_trace);
        assert_eq!(back.loglik_trace, chain.loglik_trace);
        for (a, b) in back.states.iter().zip(&chain.states) {
            assert_eq!(a.iter, b.iter);
            assert!(a.sigma.comp(0).is_identity());
            assert_eq!(a.sigma.comp(1).values(), b.sigma.comp(1).values());
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
