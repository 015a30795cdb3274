//! Tubelet tokenisation: non-overlapping `t×h×w` blocks of the clip are
//! flattened, linearly projected to `d` dimensions and offset by a learned
//! positional embedding. There is no class token; sequence pooling
//! replaces it downstream.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tensor, Var};
use crate::params::{init, Bound, ParamId, ParamStore};

/// Clip extents: frames, height, width, channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn numel(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// Tubelet extents in frames × pixels × pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tubelet {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Tubelet {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }

    /// Tubelets along (time, height, width); trailing remainders are dropped.
    pub fn grid(&self, geom: &Geometry) -> Result<[usize; 3]> {
        if self.t == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Geometry(format!("tubelet {self} has a zero extent")));
        }
        if geom.frames < self.t || geom.height < self.h || geom.width < self.w {
            return Err(Error::Geometry(format!(
                "clip {geom} is smaller than one {self} tubelet"
            )));
        }
        Ok([
            geom.frames / self.t,
            geom.height / self.h,
            geom.width / self.w,
        ])
    }

    /// `N = ⌊T/t⌋·⌊H/h⌋·⌊W/w⌋`.
    pub fn token_count(&self, geom: &Geometry) -> Result<usize> {
        Ok(self.grid(geom)?.iter().product())
    }

    /// Length of one flattened tubelet, `t·h·w·D`.
    pub fn volume(&self, channels: usize) -> usize {
        self.t * self.h * self.w * channels
    }
}

impl fmt::Display for Tubelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewConfig {
    pub tubelet: Tubelet,
    pub d: usize,
}

/// Maps pixel bytes to `[-1, 1]`: `(v/255 − 0.5)/0.5`.
pub fn normalize_pixel<S: Scalar>(v: u8) -> S {
    S::lit((f64::from(v) / 255.0 - 0.5) / 0.5)
}

pub fn normalize_clip<S: Scalar>(geom: &Geometry, bytes: &[u8]) -> Result<Tensor<S>> {
    if bytes.len() != geom.numel() {
        return Err(Error::Dimension {
            op: "normalize_clip",
            lhs: geom.shape().to_vec(),
            rhs: vec![bytes.len()],
        });
    }
    Tensor::from_vec(
        &geom.shape(),
        bytes.iter().map(|&b| normalize_pixel(b)).collect(),
    )
}

fn clip_geometry<S: Scalar>(clip: &Tensor<S>) -> Result<Geometry> {
    match *clip.shape() {
        [t, h, w, d] => Ok(Geometry::new(t, h, w, d)),
        _ => Err(Error::Geometry(format!(
            "expected a T×H×W×D clip, got shape {:?}",
            clip.shape()
        ))),
    }
}

/// Gathers every tubelet of `clip` into one row of an `N × t·h·w·D` matrix.
///
/// Rows follow (time, height, width) lexicographic order; within a row
/// the layout is (frame, row, column, channel) of the tubelet.
pub fn extract_tubelets<S: Scalar>(clip: &Tensor<S>, tubelet: Tubelet) -> Result<Tensor<S>> {
    let geom = clip_geometry(clip)?;
    let [nt, nh, nw] = tubelet.grid(&geom)?;
    let (hh, ww, cc) = (geom.height, geom.width, geom.channels);
    let vol = tubelet.volume(cc);
    let src = clip.data();
    let mut out = Vec::with_capacity(nt * nh * nw * vol);
    for it in 0..nt {
        for ih in 0..nh {
            for iw in 0..nw {
                for dt in 0..tubelet.t {
                    let f = it * tubelet.t + dt;
                    for dh in 0..tubelet.h {
                        let y = ih * tubelet.h + dh;
                        let start = ((f * hh + y) * ww + iw * tubelet.w) * cc;
                        out.extend_from_slice(&src[start..start + tubelet.w * cc]);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[nt * nh * nw, vol], out)
}

/// Parameters of one view's tokeniser.
#[derive(Clone, Copy, Debug)]
pub struct TubeletEmbedder {
    pub proj: ParamId,
    pub bias: ParamId,
    pub pos: ParamId,
}

impl TubeletEmbedder {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: &ViewConfig,
        geom: &Geometry,
        rng: &mut Rng,
    ) -> Result<Self> {
        let n = cfg.tubelet.token_count(geom)?;
        let vol = cfg.tubelet.volume(geom.channels);
        Ok(Self {
            proj: store.add(
                format!("{prefix}.proj"),
                init::fan_in_uniform(rng, &[vol, cfg.d], vol),
            ),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[cfg.d])),
            pos: store.add(format!("{prefix}.pos"), init::normal(rng, &[n, cfg.d], 0.02)),
        })
    }
}

/// One view's tokens (`N × d`) on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence<'t, S: Scalar> {
    pub tokens: Var<'t, S>,
    /// Position of the producing view in the configured view list.
    pub view_index: usize,
}

impl<'t, S: Scalar> TokenSequence<'t, S> {
    pub fn new(tokens: Var<'t, S>, view_index: usize) -> Self {
        Self { tokens, view_index }
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn with_tokens(self, tokens: Var<'t, S>) -> Self {
        Self { tokens, ..self }
    }
}

/// Token `i` = `E·vec(tubelet_i) + bias + P_i`.
pub fn tubelet_tokenize<'t, S: Scalar>(
    params: &Bound<'t, S>,
    clip: &Tensor<S>,
    cfg: &ViewConfig,
    emb: &TubeletEmbedder,
    view_index: usize,
) -> Result<TokenSequence<'t, S>> {
    let patches = extract_tubelets(clip, cfg.tubelet)?;
    let proj = params.var(emb.proj);
    let pos = params.var(emb.pos);
    let expect = [patches.cols(), cfg.d];
    if proj.shape() != expect || pos.shape() != [patches.rows(), cfg.d] {
        return Err(Error::Geometry(format!(
            "embedder for view {view_index} expects {:?} projection and {:?} positions, clip gives {:?} and {:?}",
            proj.shape(),
            pos.shape(),
            expect,
            [patches.rows(), cfg.d]
        )));
    }
    let x = params.tape().constant(patches);
    let tokens = x.matmul(proj).add_bias(params.var(emb.bias)).add(pos);
    Ok(TokenSequence::new(tokens, view_index))
}

/// Indices of `cfgs` sorted ascending by token count, ties kept in list order.
pub fn ascending_view_order(cfgs: &[ViewConfig], geom: &Geometry) -> Result<Vec<usize>> {
    let counts = cfgs
        .iter()
        .map(|c| c.tubelet.token_count(geom))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..cfgs.len()).collect();
    order.sort_by_key(|&i| counts[i]);
    Ok(order)
}

/// Tokenises `clip` once per view and returns the sequences ascending by
/// token count.
pub fn make_views<'t, S: Scalar>(
    params: &Bound<'t, S>,
    clip: &Tensor<S>,
    cfgs: &[ViewConfig],
    embs: &[TubeletEmbedder],
) -> Result<Vec<TokenSequence<'t, S>>> {
    if cfgs.len() != embs.len() {
        return Err(Error::Config(format!(
            "{} view configs but {} embedders",
            cfgs.len(),
            embs.len()
        )));
    }
    if let Some(first) = cfgs.first() {
        if let Some(bad) = cfgs.iter().find(|c| c.d != first.d) {
            return Err(Error::Config(format!(
                "views disagree on token dimension: {} vs {}",
                first.d, bad.d
            )));
        }
    }
    let geom = clip_geometry(clip)?;
    ascending_view_order(cfgs, &geom)?
        .into_iter()
        .map(|i| tubelet_tokenize(params, clip, &cfgs[i], &embs[i], i))
        .collect()
}
