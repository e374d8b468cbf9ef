//! Ablation grids: vary one factor at a time, rerun the full pipeline
//! (episodic adapter training, then the incremental protocol), and tabulate
//! per-session accuracy, average, and performance drop.

use super::run::{run_incremental, RunConfig, RunOutcome};
use super::HarnessError;
use crate::adapter::{AdapterConfig, AdapterParams};
use crate::datasets::{Dataset, RotationAngle};
use crate::encoder::EncoderParams;
use crate::heads::HeadKind;
use crate::pil::{run_pil, PilConfig};
use crate::seeding::{mix, salt};

/// The factor an ablation varies; every other setting comes from the plan's
/// base configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum AblationAxis {
    /// Episodic rehearsal breadth: (way, shot) pairs.
    WayShot(Vec<(usize, usize)>),
    /// Synthesize stand-in classes with a single arbitrary angle instead of
    /// the right-angle pool.
    RotationDegrees(Vec<f64>),
    /// Classifier family used for banks and scoring.
    ClassifierKind(Vec<HeadKind>),
    /// Fixed toggle set: no adapter, plain adapter, and the adapter's
    /// optional machinery (normalization, dropout, query-joins-graph,
    /// final-layer finetuning).
    Switches,
}

#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub axis: AblationAxis,
    pub adapter: AdapterConfig,
    pub pil: PilConfig,
    pub run: RunConfig,
    pub seed: u64,
}

/// One grid cell's protocol results, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub percents: Vec<f64>,
    pub average: f64,
    pub pd: f64,
}

struct CellSpec {
    name: String,
    adapter: AdapterConfig,
    pil: PilConfig,
    run: RunConfig,
    train_adapter: bool,
}

fn scale_for(kind: HeadKind, base: f64) -> f64 {
    match kind {
        HeadKind::Cosine => base,
        HeadKind::Linear | HeadKind::NegL2 => 1.0,
    }
}

fn cell_specs(plan: &AblationPlan) -> Vec<CellSpec> {
    let base = |name: String| CellSpec {
        name,
        adapter: plan.adapter.clone(),
        pil: plan.pil.clone(),
        run: plan.run.clone(),
        train_adapter: true,
    };
    match &plan.axis {
        AblationAxis::WayShot(pairs) => pairs
            .iter()
            .map(|&(way, shot)| {
                let mut cell = base(format!("way{way}-shot{shot}"));
                cell.pil.way = way;
                cell.pil.shot = shot;
                cell
            })
            .collect(),
        AblationAxis::RotationDegrees(degrees) => degrees
            .iter()
            .map(|&d| {
                let mut cell = base(format!("rotation-{d}"));
                cell.pil.angle_pool = vec![RotationAngle::Degrees(d)];
                cell
            })
            .collect(),
        AblationAxis::ClassifierKind(kinds) => kinds
            .iter()
            .map(|&kind| {
                let mut cell = base(format!("head-{kind}"));
                let scale = scale_for(kind, plan.run.head_scale);
                cell.pil.head_kind = kind;
                cell.pil.head_scale = scale;
                cell.run.head_kind = kind;
                cell.run.head_scale = scale;
                cell
            })
            .collect(),
        AblationAxis::Switches => {
            let mut cells = Vec::new();
            let mut off = base("adapter-off".into());
            off.run.use_adapter = false;
            off.train_adapter = false;
            cells.push(off);
            cells.push(base("adapter".into()));
            let mut ln = base("adapter+layer-norm".into());
            ln.adapter.layer_norm = true;
            cells.push(ln);
            let mut drop = base("adapter+dropout".into());
            drop.adapter.dropout = 0.1;
            cells.push(drop);
            let mut qn = base("adapter+query-node".into());
            qn.adapter.include_query_node = true;
            cells.push(qn);
            let mut ll = base("adapter+last-layer".into());
            ll.pil.last_layer_lr = ll.pil.learning_rate * 0.1;
            cells.push(ll);
            cells
        }
    }
}

/// Run every cell of the plan. Each cell derives its own seeds from the
/// plan seed and its index, trains its adapter episodically on the base
/// classes, then runs the incremental protocol.
pub fn run_ablation(
    encoder: &EncoderParams,
    dataset: &Dataset,
    plan: &AblationPlan,
) -> Result<Vec<AblationCell>, HarnessError> {
    let specs = cell_specs(plan);
    let mut cells = Vec::with_capacity(specs.len());
    for (idx, spec) in specs.iter().enumerate() {
        let cell_seed = mix(plan.seed, &[salt("ablation-cell"), idx as u64]);
        let mut run_cfg = spec.run.clone();
        run_cfg.seed = plan.run.seed;

        let outcome: RunOutcome = if spec.train_adapter {
            let adapter = AdapterParams::init(
                spec.adapter.clone(),
                encoder.config().embed_dim,
                mix(cell_seed, &[salt("adapter-init")]),
            )?;
            let mut pil_cfg = spec.pil.clone();
            pil_cfg.seed = mix(cell_seed, &[salt("episodes")]);
            let base_classes: Vec<usize> = (0..run_cfg.base_classes).collect();
            let trained = run_pil(&adapter, encoder, dataset, &base_classes, &pil_cfg)?;
            run_cfg.use_adapter = true;
            run_incremental(&trained.encoder, Some(&trained.adapter), None, dataset, &run_cfg)?
        } else {
            run_cfg.use_adapter = false;
            run_incremental(encoder, None, None, dataset, &run_cfg)?
        };

        cells.push(AblationCell {
            name: spec.name.clone(),
            percents: outcome.metrics.percents(),
            average: outcome.metrics.average_percent,
            pd: outcome.metrics.pd,
        });
    }
    Ok(cells)
}

/// Render cells as CSV: `config,s0..sN,average,pd`, percentages with two
/// decimals.
pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let sessions = cells.first().map_or(0, |c| c.percents.len());
    let mut csv = String::from("config");
    for s in 0..sessions {
        csv.push_str(&format!(",s{s}"));
    }
    csv.push_str(",average,pd\n");
    for cell in cells {
        csv.push_str(&cell.name);
        for p in &cell.percents {
            csv.push_str(&format!(",{p:.2}"));
        }
        csv.push_str(&format!(",{:.2},{:.2}\n", cell.average, cell.pd));
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blob_dataset;
    use crate::encoder::{AugmentConfig, EncoderConfig, EncoderKind};

    fn tiny_plan() -> AblationPlan {
        AblationPlan {
            axis: AblationAxis::WayShot(vec![(2, 1), (3, 1)]),
            adapter: AdapterConfig::default(),
            pil: PilConfig {
                way: 2,
                shot: 1,
                query: 2,
                iterations: 2,
                learning_rate: 1e-3,
                decay_every: 0,
                last_layer_lr: 0.0,
                augment: AugmentConfig::none(),
                ..PilConfig::default()
            },
            run: RunConfig {
                base_classes: 6,
                way: 2,
                shot: 2,
                incremental_sessions: 2,
                eval_threads: 2,
                seed: 31,
                ..RunConfig::default()
            },
            seed: 17,
        }
    }

    fn tiny_fixture() -> (Dataset, EncoderParams) {
        let d = synth_blob_dataset(10, 8, 2, 16, 6).unwrap();
        let enc = EncoderParams::init(
            EncoderConfig {
                kind: EncoderKind::Mlp,
                channels: 1,
                height: 16,
                width: 16,
                hidden: vec![16],
                conv_channels: (4, 6),
                embed_dim: 8,
            },
            2,
        )
        .unwrap();
        (d, enc)
    }

    #[test]
    fn grid_runs_every_cell_deterministically() {
        let (d, enc) = tiny_fixture();
        let plan = tiny_plan();
        let a = run_ablation(&enc, &d, &plan).unwrap();
        let b = run_ablation(&enc, &d, &plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].name, "way2-shot1");
        assert_eq!(a[1].name, "way3-shot1");
        assert_eq!(a[0].percents.len(), 3);
        // The axis must actually reach the episodic configuration.
        let specs = cell_specs(&plan);
        assert_eq!(specs[0].pil.way, 2);
        assert_eq!(specs[1].pil.way, 3);
        assert_eq!(specs[1].pil.shot, 1);
    }

    #[test]
    fn switch_cells_cover_the_toggle_set() {
        let plan = AblationPlan {
            axis: AblationAxis::Switches,
            ..tiny_plan()
        };
        let names: Vec<String> = cell_specs(&plan).into_iter().map(|c| c.name).collect();
        assert_eq!(
            names,
            vec![
                "adapter-off",
                "adapter",
                "adapter+layer-norm",
                "adapter+dropout",
                "adapter+query-node",
                "adapter+last-layer"
            ]
        );
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cells = vec![
            AblationCell {
                name: "a".into(),
                percents: vec![80.0, 70.0],
                average: 75.0,
                pd: 10.0,
            },
            AblationCell {
                name: "b".into(),
                percents: vec![82.5, 71.25],
                average: 76.875,
                pd: 11.25,
            },
        ];
        let csv = ablation_csv(&cells);
        assert_eq!(
            csv,
            "config,s0,s1,average,pd\na,80.00,70.00,75.00,10.00\nb,82.50,71.25,76.88,11.25\n"
        );
    }

    #[test]
    fn classifier_kind_cells_retune_scale() {
        let plan = AblationPlan {
            axis: AblationAxis::ClassifierKind(vec![
                HeadKind::Cosine,
                HeadKind::Linear,
                HeadKind::NegL2,
            ]),
            ..tiny_plan()
        };
        let specs = cell_specs(&plan);
        assert_eq!(specs[0].run.head_scale, 16.0);
        assert_eq!(specs[1].run.head_scale, 1.0);
        assert_eq!(specs[2].run.head_scale, 1.0);
        assert_eq!(specs[1].pil.head_kind, HeadKind::Linear);
    }
}
