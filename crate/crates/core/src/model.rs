//! The assembled tracker: image tokenizer, object tokenizer (query or box
//! mode), region-aware alignment, optional temporal memory fusion, optional
//! toy detector, and the causal decoder, all sharing one parameter store.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::decoder::{Decoder, DecoderConfig, Positional, RowRef};
use crate::detector::ToyDetector;
use crate::domain::{BBox, Detection, IdVocabulary, Image, ModelDims, DEFAULT_ID_CAPACITY};
use crate::error::{Error, Result};
use crate::raa::RegionAlign;
use crate::scalar::Scalar;
use crate::sequence::ObjectContent;
use crate::tmf::TemporalMemoryFusion;
use crate::tokenize::{BoxDiscretizer, ImageTokenizer, ImageTokens, ObjectAdapter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectTokenMode {
    /// One continuous token from the detector query embedding.
    Query,
    /// Four discrete bin tokens for the box corners.
    Box,
}

impl std::str::FromStr for ObjectTokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Self::Query),
            "box" => Ok(Self::Box),
            other => Err(Error::InvalidConfig(format!(
                "unknown object token mode {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ObjectTokenMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Query => "query",
            Self::Box => "box",
        })
    }
}

/// Flat model configuration; `dims()` and `decoder()` assemble the per-module views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_img: usize,
    pub d_lm: usize,
    pub d_det: usize,
    pub patch: usize,
    pub channels: usize,
    pub capacity: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub positional: Positional,
    pub embed_std: f64,
    pub object_tokens: ObjectTokenMode,
    pub n_bins: usize,
    pub alpha: f64,
    pub raa: bool,
    pub tmf: bool,
    pub detector: bool,
    /// Keep image tokens inside history frame blocks.
    pub history_images: bool,
    /// Put the current frame's image tokens before its objects.
    pub current_image: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        let dec = DecoderConfig::default();
        Self {
            d_img: dims.d_img,
            d_lm: dims.d_lm,
            d_det: dims.d_det,
            patch: dims.patch,
            channels: 3,
            capacity: DEFAULT_ID_CAPACITY,
            layers: dec.layers,
            heads: dec.heads,
            ff: dec.ff,
            max_len: dec.max_len,
            dropout: dec.dropout,
            positional: dec.positional,
            embed_std: dec.embed_std,
            object_tokens: ObjectTokenMode::Query,
            n_bins: 200,
            alpha: 1.0,
            raa: true,
            tmf: false,
            detector: false,
            history_images: false,
            current_image: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_img: self.d_img,
            d_lm: self.d_lm,
            d_det: self.d_det,
            patch: self.patch,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            layers: self.layers,
            heads: self.heads,
            d_lm: self.d_lm,
            ff: self.ff,
            max_len: self.max_len,
            dropout: self.dropout,
            positional: self.positional,
            embed_std: self.embed_std,
        }
    }

    pub fn vocab(&self) -> IdVocabulary {
        match self.object_tokens {
            ObjectTokenMode::Query => IdVocabulary::new(self.capacity),
            ObjectTokenMode::Box => IdVocabulary::with_bins(self.capacity, self.n_bins),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate(self.heads)?;
        self.decoder().validate()?;
        if self.capacity == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig(
                "capacity and channels must be positive".into(),
            ));
        }
        if self.object_tokens == ObjectTokenMode::Box {
            BoxDiscretizer::new(self.n_bins, self.alpha, 0)?;
            if self.tmf {
                return Err(Error::InvalidConfig(
                    "temporal memory fusion needs continuous object tokens".into(),
                ));
            }
            if self.detector {
                return Err(Error::InvalidConfig(
                    "the toy detector needs query object tokens".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Image tokens and object contents of one frame on a tape.
#[derive(Clone, Debug)]
pub struct EncodedFrame {
    pub image: ImageTokens,
    /// Patch features before the vision adapter (`d_img` wide).
    pub features: Var,
    pub objects: Vec<ObjectContent<RowRef>>,
}

impl EncodedFrame {
    pub fn image_refs(&self) -> Vec<RowRef> {
        (0..self.image.len())
            .map(|p| (self.image.tokens, p))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ArMot<T: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub vocab: IdVocabulary,
    pub image: ImageTokenizer,
    pub objects: ObjectAdapter,
    pub raa: Option<RegionAlign>,
    pub tmf: Option<TemporalMemoryFusion>,
    pub detector: Option<ToyDetector>,
    pub discretizer: Option<BoxDiscretizer>,
    pub decoder: Decoder,
}

impl<T: Scalar> ArMot<T> {
    /// Builds a freshly initialized model; parameters depend only on `cfg` (including its seed).
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let dims = cfg.dims();
        let vocab = cfg.vocab();
        let image = ImageTokenizer::new(&mut store, &dims, cfg.channels, &mut rng);
        let objects = ObjectAdapter::new(&mut store, &dims, &mut rng);
        let raa = cfg
            .raa
            .then(|| RegionAlign::new(&mut store, cfg.d_lm, &mut rng));
        let tmf = cfg
            .tmf
            .then(|| TemporalMemoryFusion::new(&mut store, cfg.d_lm, cfg.heads, &mut rng));
        let detector = cfg
            .detector
            .then(|| ToyDetector::new(&mut store, cfg.d_img, cfg.d_det, &mut rng));
        let decoder = Decoder::new(&mut store, &cfg.decoder(), vocab, &mut rng)?;
        let discretizer = match cfg.object_tokens {
            ObjectTokenMode::Query => None,
            ObjectTokenMode::Box => Some(BoxDiscretizer::new(
                cfg.n_bins,
                cfg.alpha,
                vocab.bin_offset(),
            )?),
        };
        let mut model = Self {
            cfg,
            store,
            vocab,
            image,
            objects,
            raa,
            tmf,
            detector,
            discretizer,
            decoder,
        };
        model.init_bin_embeddings();
        Ok(model)
    }

    /// Bin tokens start from Fourier features of their bin centers so that
    /// neighboring bins begin with similar embeddings.
    fn init_bin_embeddings(&mut self) {
        let Some(disc) = self.discretizer else { return };
        let eff = disc.effective_bins();
        let d = self.cfg.d_lm;
        let table = self.store.get_mut(self.decoder.embed);
        for b in 0..disc.n_bins {
            let center = (b.min(eff - 1) as f64 + 0.5) / eff as f64;
            for i in 0..d {
                let freq = 2f64.powf((i / 2) as f64 * 6.0 / (d / 2).max(1) as f64);
                let angle = std::f64::consts::PI * freq * center;
                let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                table[[disc.offset + b, i]] = T::lit(0.5 * v);
            }
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn encode_image(
        &self,
        tape: &mut Tape<'_, T>,
        image: &Image,
    ) -> Result<(ImageTokens, Var)> {
        let (features, grid_h, grid_w) = self.image.encode_patches(tape, image)?;
        let tokens = self.image.adapter.forward(tape, features);
        Ok((
            ImageTokens {
                tokens,
                grid_h,
                grid_w,
            },
            features,
        ))
    }

    /// N×d_det query matrix built from detection embeddings.
    pub fn query_input(&self, tape: &mut Tape<'_, T>, dets: &[&Detection]) -> Result<Var> {
        let mut input = Array2::zeros((dets.len(), self.cfg.d_det));
        for (r, d) in dets.iter().enumerate() {
            if d.query_embedding.len() != self.cfg.d_det {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.d_det,
                    got: d.query_embedding.len(),
                });
            }
            for (c, &v) in d.query_embedding.iter().enumerate() {
                input[[r, c]] = T::lit(v as f64);
            }
        }
        Ok(tape.input(input))
    }

    /// Object contents for `boxes`. Query mode needs `queries` (N×d_det).
    pub fn object_tokens(
        &self,
        tape: &mut Tape<'_, T>,
        image: &ImageTokens,
        queries: Option<Var>,
        boxes: &[BBox],
    ) -> Result<Vec<ObjectContent<RowRef>>> {
        if boxes.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(disc) = &self.discretizer {
            return Ok(boxes
                .iter()
                .map(|b| ObjectContent::Bins(disc.discretize(b)))
                .collect());
        }
        let queries =
            queries.ok_or_else(|| Error::Shape("query mode needs query embeddings".into()))?;
        let raw = self.objects.forward_var(tape, queries);
        let tokens = match &self.raa {
            Some(raa) => raa.align(tape, raw, boxes, image).tokens,
            None => raw,
        };
        Ok((0..boxes.len())
            .map(|r| ObjectContent::Token((tokens, r)))
            .collect())
    }

    /// Encodes a frame's image and the given detections.
    pub fn encode_frame(
        &self,
        tape: &mut Tape<'_, T>,
        image: &Image,
        dets: &[&Detection],
    ) -> Result<EncodedFrame> {
        let (tokens, features) = self.encode_image(tape, image)?;
        let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let queries = if self.discretizer.is_none() && !dets.is_empty() {
            Some(self.query_input(tape, dets)?)
        } else {
            None
        };
        let objects = self.object_tokens(tape, &tokens, queries, &boxes)?;
        Ok(EncodedFrame {
            image: tokens,
            features,
            objects,
        })
    }
}

/// f32 model.
pub type ArMotF32 = ArMot<f32>;
/// f64 model.
pub type ArMotF64 = ArMot<f64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_img: 8,
            d_lm: 8,
            d_det: 6,
            layers: 1,
            heads: 2,
            ff: 16,
            capacity: 4,
            ..Default::default()
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = ArMot::<f64>::new(tiny()).unwrap();
        let b = ArMot::<f64>::new(tiny()).unwrap();
        for ((_, na, va), (_, nb, vb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn box_mode_rejects_tmf() {
        let cfg = ModelConfig {
            object_tokens: ObjectTokenMode::Box,
            tmf: true,
            ..tiny()
        };
        assert!(ArMot::<f32>::new(cfg).is_err());
    }

    #[test]
    fn query_tokens_zero_for_zero_embedding_with_zero_final_layer() {
        let cfg = ModelConfig {
            raa: false,
            ..tiny()
        };
        let mut m = ArMot::<f64>::new(cfg).unwrap();
        let last = m.objects.mlp.last().clone();
        *m.store.get_mut(last.weight) = crate::nn::init_matrix(8, 8, Init::Zeros, &mut rand::rng());
        let det = Detection {
            bbox: BBox::new(0.1, 0.1, 0.4, 0.4).unwrap(),
            confidence: 1.0,
            query_embedding: vec![0.0; 6],
            appearance: None,
        };
        let image = Image::filled(32, 32, 3, 0.2);
        let mut tape = Tape::new(&m.store);
        let enc = m.encode_frame(&mut tape, &image, &[&det, &det]).unwrap();
        let ObjectContent::Token((v, _)) = enc.objects[0] else {
            panic!()
        };
        assert!(tape.value(v).iter().all(|&x| x == 0.0));
        assert_eq!(tape.value(v).row(0), tape.value(v).row(1));
    }

    #[test]
    fn box_mode_emits_bins() {
        let cfg = ModelConfig {
            object_tokens: ObjectTokenMode::Box,
            n_bins: 100,
            alpha: 0.5,
            ..tiny()
        };
        let m = ArMot::<f32>::new(cfg).unwrap();
        let det = Detection {
            bbox: BBox::new(0.5, 0.0, 1.0, 0.3).unwrap(),
            confidence: 1.0,
            query_embedding: vec![],
            appearance: None,
        };
        let mut tape = Tape::new(&m.store);
        let enc = m
            .encode_frame(&mut tape, &Image::filled(32, 32, 3, 0.0), &[&det])
            .unwrap();
        assert_eq!(
            enc.objects,
            vec![ObjectContent::Bins([5 + 25, 5, 5 + 49, 5 + 15])]
        );
    }
}
