//! Feature-space comparison of synthetic, refined and real frames: masked
//! inputs, pooled segmenter features and a joint t-SNE embedding.

mod tsne;

pub use tsne::{
    conditional_affinities, joint_affinities, kl_divergence, squared_distances, student_t, tsne_embed, SquareMatrix,
    TsneConfig, TsneResult, MIN_POINTS,
};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use syn2real_tensor::{Graph, ParamStore, Scalar};

use crate::data::{images_to_tensor, Dataset, Domain, Image, LabeledSample};
use crate::error::{Error, Result};
use crate::plot::scatter_svg;
use crate::segmentation::{Segmenter, SEGMENTER_LAYERS};
use crate::translation::source_id;

const FEATURE_BATCH: usize = 16;

/// Zeroes every background (label 0) pixel.
pub fn mask_background(sample: &LabeledSample) -> Result<Image<f32>> {
    let (h, w) = (sample.height(), sample.width());
    if (sample.labels.height(), sample.labels.width()) != (h, w) {
        return Err(Error::Shape("labels and image differ in size".into()));
    }
    let mut image = sample.image.clone();
    let labels = sample.labels.data();
    for c in 0..3 {
        for (v, &l) in image.plane_mut(c).iter_mut().zip(labels) {
            if l == 0 {
                *v = 0.0;
            }
        }
    }
    Ok(image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_id: String,
    pub domain: Domain,
}

/// Channel means of segmenter layer `layer` for each image.
pub fn pooled_feature_batch<T: Scalar>(
    network: &Segmenter<T>,
    store: &ParamStore<T>,
    images: &[&Image<f32>],
    layer: usize,
) -> Result<Vec<Vec<f64>>> {
    if layer >= SEGMENTER_LAYERS {
        return Err(Error::Config(format!("segmenter has no layer {layer} (0..{SEGMENTER_LAYERS})")));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(FEATURE_BATCH) {
        let mut g = Graph::new();
        g.freeze(store);
        let x = g.input(images_to_tensor::<f32, T>(chunk)?);
        let (layers, _) = network.run(&mut g, store, x, layer)?;
        let pooled = g.spatial_mean(layers[layer])?;
        let (n, c) = g.value(pooled).dims2()?;
        let d = g.value(pooled).data();
        out.extend((0..n).map(|i| d[i * c..(i + 1) * c].iter().map(|v| v.to_f64().unwrap()).collect()));
    }
    Ok(out)
}

pub fn pooled_features<T: Scalar>(
    network: &Segmenter<T>,
    store: &ParamStore<T>,
    sample: &LabeledSample,
    layer: usize,
) -> Result<FeatureVector> {
    Ok(FeatureVector {
        values: pooled_feature_batch(network, store, &[&sample.image], layer)?.remove(0),
        source_id: source_id(&sample.id).to_string(),
        domain: sample.domain,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Segmenter layer whose pooled activations are compared.
    pub layer: usize,
    pub tsne: TsneConfig,
    /// Source id of the triple joined by a line; defaults to the first match.
    pub highlight: Option<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            layer: 1,
            tsne: TsneConfig::default(),
            highlight: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub id: String,
    pub domain: Domain,
    pub x: f64,
    pub y: f64,
}

/// Mean distance from each vector of a set to its nearest real vector,
/// measured on pooled features before embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapMetrics {
    pub synthetic_to_real: f64,
    pub refined_to_real: f64,
}

/// Descriptive spread of one domain in the embedding; no claim rests on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpread {
    pub domain: Domain,
    pub centroid: [f64; 2],
    /// Mean distance of the domain's points to their centroid.
    pub radius: f64,
}

fn domain_spreads(points: &[EmbeddedPoint]) -> Vec<DomainSpread> {
    [Domain::Synthetic, Domain::Refined, Domain::PseudoReal]
        .into_iter()
        .filter_map(|domain| {
            let pts: Vec<&EmbeddedPoint> = points.iter().filter(|p| p.domain == domain).collect();
            if pts.is_empty() {
                return None;
            }
            let n = pts.len() as f64;
            let centroid = [pts.iter().map(|p| p.x).sum::<f64>() / n, pts.iter().map(|p| p.y).sum::<f64>() / n];
            let radius = pts.iter().map(|p| (p.x - centroid[0]).hypot(p.y - centroid[1])).sum::<f64>() / n;
            Some(DomainSpread { domain, centroid, radius })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleAnalysis {
    pub config: AnalysisConfig,
    pub triples: usize,
    pub points: Vec<EmbeddedPoint>,
    pub spreads: Vec<DomainSpread>,
    pub gap: GapMetrics,
    pub highlighted: String,
    pub perplexity: f64,
    pub kl_after_exaggeration: f64,
    pub final_kl: f64,
}

pub fn mean_nearest_distance(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    from.iter()
        .map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Masks each matched triple with the synthetic frame's labels, pools layer
/// features of all three domains and embeds them jointly.
pub fn analyze_triples<T: Scalar>(
    synthetic: &Dataset,
    refined: &Dataset,
    real: &Dataset,
    network: &Segmenter<T>,
    store: &ParamStore<T>,
    cfg: &AnalysisConfig,
) -> Result<TripleAnalysis> {
    let refined_by: HashMap<&str, &LabeledSample> = refined.samples.iter().map(|s| (source_id(&s.id), s)).collect();
    let real_by: HashMap<&str, &LabeledSample> = real.samples.iter().map(|s| (source_id(&s.id), s)).collect();
    let mut triples = Vec::new();
    for s in &synthetic.samples {
        if let (Some(r), Some(y)) = (refined_by.get(s.id.as_str()), real_by.get(s.id.as_str())) {
            triples.push((s, *r, *y));
        }
    }
    if triples.is_empty() {
        return Err(Error::Data("no synthetic/refined/real triples share an id".into()));
    }
    let mask = |img: &LabeledSample, labels: &LabeledSample| -> Result<Image<f32>> {
        let with = LabeledSample::new(img.id.clone(), img.domain, img.image.clone(), labels.labels.clone())?;
        mask_background(&with)
    };
    let mut images: [Vec<Image<f32>>; 3] = Default::default();
    for &(s, r, y) in &triples {
        images[0].push(mask(s, s)?);
        images[1].push(mask(r, s)?);
        images[2].push(mask(y, s)?);
    }
    let mut feats = Vec::with_capacity(3);
    for set in &images {
        let refs: Vec<&Image<f32>> = set.iter().collect();
        feats.push(pooled_feature_batch(network, store, &refs, cfg.layer)?);
    }
    let gap = GapMetrics {
        synthetic_to_real: mean_nearest_distance(&feats[0], &feats[2]),
        refined_to_real: mean_nearest_distance(&feats[1], &feats[2]),
    };
    let all: Vec<Vec<f64>> = feats.iter().flatten().cloned().collect();
    let emb = tsne_embed(&all, &cfg.tsne)?;
    let n = triples.len();
    let domains = [Domain::Synthetic, Domain::Refined, Domain::PseudoReal];
    let points: Vec<EmbeddedPoint> = (0..3 * n)
        .map(|k| EmbeddedPoint {
            id: triples[k % n].0.id.clone(),
            domain: domains[k / n],
            x: emb.points[k][0],
            y: emb.points[k][1],
        })
        .collect();
    let highlighted = cfg
        .highlight
        .clone()
        .filter(|h| triples.iter().any(|t| &t.0.id == h))
        .unwrap_or_else(|| triples[0].0.id.clone());
    Ok(TripleAnalysis {
        config: cfg.clone(),
        triples: n,
        spreads: domain_spreads(&points),
        points,
        gap,
        highlighted,
        perplexity: emb.perplexity,
        kl_after_exaggeration: emb.kl_after_exaggeration,
        final_kl: emb.final_kl,
    })
}

impl TripleAnalysis {
    pub fn svg(&self) -> String {
        let pts: Vec<(Domain, f64, f64)> = self.points.iter().map(|p| (p.domain, p.x, p.y)).collect();
        let link: Vec<(f64, f64)> = [Domain::Synthetic, Domain::Refined, Domain::PseudoReal]
            .iter()
            .filter_map(|d| self.points.iter().find(|p| p.id == self.highlighted && p.domain == *d))
            .map(|p| (p.x, p.y))
            .collect();
        scatter_svg(&pts, &link, &format!("t-SNE of pooled features, layer {}", self.config.layer))
    }

    pub fn write(&self, json: &Path, svg: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).unwrap();
        fs::write(json, text).map_err(|e| Error::io(json, e))?;
        if let Some(path) = svg {
            fs::write(path, self.svg()).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
