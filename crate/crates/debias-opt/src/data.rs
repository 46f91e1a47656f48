//! Seeded synthetic data generators with explicit group structure.
//!
//! Every generator is a pure function of its spec (seed included): the
//! same spec yields identical bytes. Group ids pair the class label with a
//! spurious attribute; training code receives a [`ClassView`] that hides
//! the group column, so only evaluation and the group-aware baseline can
//! see it.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::minmax::{Split as TaskSplit, TaskBundle, TaskLoss};
use crate::rng::SplitMix64;
use crate::saddle::{MultiLabelDataset, PrivilegedPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Features, class labels, and group ids, with per-instance split tags.
#[derive(Debug, Clone)]
pub struct GroupedDataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    groups: Vec<usize>,
    splits: Vec<Split>,
    classes: usize,
    group_count: usize,
}

impl GroupedDataset {
    pub fn new(
        features: DenseMatrix,
        labels: Vec<usize>,
        groups: Vec<usize>,
        splits: Vec<Split>,
        classes: usize,
        group_count: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || groups.len() != n || splits.len() != n {
            return Err(Error::Data("column lengths disagree".into()));
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::Data("label out of range".into()));
        }
        if groups.iter().any(|&g| g >= group_count) {
            return Err(Error::Data("group id out of range".into()));
        }
        Ok(Self {
            features,
            labels,
            groups,
            splits,
            classes,
            group_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Group-hidden view of a split: the only thing training paths see.
    pub fn class_view(&self, split: Split) -> ClassView<'_> {
        ClassView {
            data: self,
            indices: self.split_indices(split),
        }
    }

    /// Group-annotated view; for evaluation and the group-aware baseline.
    pub fn grouped_view(&self, split: Split) -> GroupedView<'_> {
        GroupedView {
            data: self,
            indices: self.split_indices(split),
        }
    }

    fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Columnar text serialization; see the format note on [`read_grouped`].
    pub fn write_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# grouped dataset v1\n");
        out.push_str(&format!(
            "n={} m={} k={} groups={}\n",
            self.len(),
            self.feature_dim(),
            self.classes,
            self.group_count
        ));
        for i in 0..self.len() {
            let feats: Vec<String> = self
                .features
                .row(i)
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            out.push_str(&format!(
                "{} {} {} {}\n",
                feats.join(" "),
                self.labels[i],
                self.groups[i],
                self.splits[i].tag()
            ));
        }
        out
    }
}

/// Parse the columnar text format written by [`GroupedDataset::write_text`]:
/// a comment line, a header `n= m= k= groups=`, then one line per instance
/// holding `m` features, the 0-based label, the 0-based group id, and the
/// split tag, all space-separated.
pub fn read_grouped(text: &str) -> Result<GroupedDataset> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("missing header".into()))?;
    let mut n = None;
    let mut m = None;
    let mut k = None;
    let mut groups_count = None;
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad header field {part:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::Data(format!("bad header value {part:?}")))?;
        match key {
            "n" => n = Some(value),
            "m" => m = Some(value),
            "k" => k = Some(value),
            "groups" => groups_count = Some(value),
            _ => return Err(Error::Data(format!("unknown header key {key:?}"))),
        }
    }
    let (n, m, k, group_count) = match (n, m, k, groups_count) {
        (Some(n), Some(m), Some(k), Some(g)) => (n, m, k, g),
        _ => return Err(Error::Data("incomplete header".into())),
    };
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != m + 3 {
            return Err(Error::Data(format!(
                "expected {} fields per row, found {}",
                m + 3,
                fields.len()
            )));
        }
        let mut feat = Vec::with_capacity(m);
        for f in &fields[..m] {
            feat.push(
                f.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad feature value {f:?}")))?,
            );
        }
        rows.push(feat);
        labels.push(
            fields[m]
                .parse()
                .map_err(|_| Error::Data("bad label".into()))?,
        );
        groups.push(
            fields[m + 1]
                .parse()
                .map_err(|_| Error::Data("bad group".into()))?,
        );
        splits.push(Split::from_tag(fields[m + 2])?);
    }
    if rows.len() != n {
        return Err(Error::Data(format!("expected {n} rows, found {}", rows.len())));
    }
    GroupedDataset::new(
        DenseMatrix::from_rows(&rows)?,
        labels,
        groups,
        splits,
        k,
        group_count,
    )
}

/// Columnar text form of a multi-label dataset: a comment line, a header
/// `n= m= t=`, then one line per instance with `m` features followed by
/// `t` signed labels written as `+1` / `-1`.
pub fn write_multilabel_text(data: &MultiLabelDataset) -> String {
    let mut out = String::new();
    out.push_str("# multilabel dataset v1\n");
    out.push_str(&format!(
        "n={} m={} t={}\n",
        data.n(),
        data.feature_dim(),
        data.label_count()
    ));
    for i in 0..data.n() {
        let feats: Vec<String> = data.feature_row(i).iter().map(|v| format!("{v}")).collect();
        let signs: Vec<String> = data
            .signs_row(i)
            .iter()
            .map(|&s| if s > 0 { "+1".to_string() } else { "-1".to_string() })
            .collect();
        out.push_str(&format!("{} {}\n", feats.join(" "), signs.join(" ")));
    }
    out
}

/// Parse the format written by [`write_multilabel_text`].
pub fn read_multilabel(text: &str) -> Result<MultiLabelDataset> {
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("missing header".into()))?;
    let mut n = None;
    let mut m = None;
    let mut t = None;
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad header field {part:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::Data(format!("bad header value {part:?}")))?;
        match key {
            "n" => n = Some(value),
            "m" => m = Some(value),
            "t" => t = Some(value),
            _ => return Err(Error::Data(format!("unknown header key {key:?}"))),
        }
    }
    let (n, m, t) = match (n, m, t) {
        (Some(n), Some(m), Some(t)) => (n, m, t),
        _ => return Err(Error::Data("incomplete header".into())),
    };
    let mut rows = Vec::with_capacity(n);
    let mut signs: Vec<i8> = Vec::with_capacity(n * t);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != m + t {
            return Err(Error::Data(format!(
                "expected {} fields per row, found {}",
                m + t,
                fields.len()
            )));
        }
        let mut feat = Vec::with_capacity(m);
        for f in &fields[..m] {
            feat.push(
                f.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad feature value {f:?}")))?,
            );
        }
        rows.push(feat);
        for f in &fields[m..] {
            signs.push(match *f {
                "+1" | "1" => 1,
                "-1" => -1,
                other => return Err(Error::Data(format!("bad sign {other:?}"))),
            });
        }
    }
    if rows.len() != n {
        return Err(Error::Data(format!("expected {n} rows, found {}", rows.len())));
    }
    MultiLabelDataset::new(DenseMatrix::from_rows(&rows)?, signs)
}

/// Training view: features and labels only, no group ids.
pub struct ClassView<'a> {
    data: &'a GroupedDataset,
    indices: Vec<usize>,
}

impl ClassView<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.feature_dim()
    }

    pub fn classes(&self) -> usize {
        self.data.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        self.data.features.row(self.indices[i])
    }

    pub fn label(&self, i: usize) -> usize {
        self.data.labels[self.indices[i]]
    }
}

/// Evaluation view: adds the group column back.
pub struct GroupedView<'a> {
    data: &'a GroupedDataset,
    indices: Vec<usize>,
}

impl GroupedView<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.feature_dim()
    }

    pub fn classes(&self) -> usize {
        self.data.classes
    }

    pub fn group_count(&self) -> usize {
        self.data.group_count
    }

    pub fn features(&self, i: usize) -> &[f64] {
        self.data.features.row(self.indices[i])
    }

    pub fn label(&self, i: usize) -> usize {
        self.data.labels[self.indices[i]]
    }

    pub fn group(&self, i: usize) -> usize {
        self.data.groups[self.indices[i]]
    }
}

/// Spec for the binary spurious-correlation benchmark.
///
/// Features have 10 dimensions. Dimension 0 carries the causal signal as a
/// magnitude code: class 1 sits at `±core_snr` (random sign), class 0 at
/// 0, both with unit noise, so the causal feature is invisible to a
/// linear readout on the raw features and must be composed by the network,
/// while dimension 1 carries the spurious signal as a plain mean shift of
/// `±spur_snr / 2` by attribute. The remaining dimensions are pure noise.
/// The spurious attribute agrees with the label with probability `rho`,
/// assigned deterministically by quota per class. Group ids are
/// `2 * label + attribute`; groups 1 (y=0, a=1) and 2 (y=1, a=0) are the
/// bias-conflicting minorities. The test split is group-balanced.
#[derive(Debug, Clone)]
pub struct SpuriousSpec {
    pub rho: f64,
    /// Amplitude of the causal magnitude code.
    pub core_snr: f64,
    /// Mean separation of the spurious shift.
    pub spur_snr: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Test instances per group (4 groups).
    pub n_test_per_group: usize,
    pub seed: u64,
}

pub const SPURIOUS_FEATURE_DIM: usize = 10;

pub fn gen_spurious_binary(spec: &SpuriousSpec) -> Result<GroupedDataset> {
    if !(0.5..1.0).contains(&spec.rho) {
        return Err(Error::InvalidConfig("rho must lie in [0.5, 1)".into()));
    }
    if spec.core_snr <= 0.0 || spec.spur_snr <= 0.0 {
        return Err(Error::InvalidConfig("snr values must be > 0".into()));
    }
    let mut rng = SplitMix64::stream(spec.seed, "spurious-data");

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut splits = Vec::new();

    let push_block = |rng: &mut SplitMix64,
                          rows: &mut Vec<Vec<f64>>,
                          labels: &mut Vec<usize>,
                          groups: &mut Vec<usize>,
                          splits: &mut Vec<Split>,
                          split: Split,
                          counts: [usize; 4]| {
        // counts indexed by group id = 2*label + attribute.
        let mut order: Vec<usize> = Vec::new();
        for (g, &c) in counts.iter().enumerate() {
            order.extend(std::iter::repeat_n(g, c));
        }
        rng.shuffle(&mut order);
        for g in order {
            let label = g / 2;
            let attr = g % 2;
            let attr_sign = if attr == 1 { 1.0 } else { -1.0 };
            let mut x = Vec::with_capacity(SPURIOUS_FEATURE_DIM);
            let core = if label == 1 {
                let code_sign = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
                code_sign * spec.core_snr
            } else {
                0.0
            };
            x.push(core + rng.next_normal());
            x.push(attr_sign * spec.spur_snr / 2.0 + rng.next_normal());
            for _ in 2..SPURIOUS_FEATURE_DIM {
                x.push(rng.next_normal());
            }
            rows.push(x);
            labels.push(label);
            groups.push(g);
            splits.push(split);
        }
    };

    // Quota per class: round(n_class * rho) bias-confirming (attribute ==
    // label), remainder conflicting.
    let quota = |n_split: usize, rho: f64| -> [usize; 4] {
        let per_class = [n_split / 2, n_split - n_split / 2];
        let mut counts = [0usize; 4];
        for (label, &nc) in per_class.iter().enumerate() {
            let confirming = (nc as f64 * rho).round() as usize;
            let conflicting = nc - confirming;
            let attr_match = label; // attribute equal to label confirms
            counts[2 * label + attr_match] = confirming;
            counts[2 * label + (1 - attr_match)] = conflicting;
        }
        counts
    };

    push_block(
        &mut rng,
        &mut rows,
        &mut labels,
        &mut groups,
        &mut splits,
        Split::Train,
        quota(spec.n_train, spec.rho),
    );
    push_block(
        &mut rng,
        &mut rows,
        &mut labels,
        &mut groups,
        &mut splits,
        Split::Val,
        quota(spec.n_val, spec.rho),
    );
    push_block(
        &mut rng,
        &mut rows,
        &mut labels,
        &mut groups,
        &mut splits,
        Split::Test,
        [spec.n_test_per_group; 4],
    );

    GroupedDataset::new(DenseMatrix::from_rows(&rows)?, labels, groups, splits, 2, 4)
}

/// Spec for the multi-label fixture behind the saddle solver.
#[derive(Debug, Clone)]
pub struct MultilabelSpec {
    pub n: usize,
    pub m: usize,
    pub labels: usize,
    /// Noise scale around the drawn prototype; larger values make
    /// confusing sets denser.
    pub overlap: f64,
    /// Privileged set size; the partition takes the first labels.
    pub privileged: usize,
    pub seed: u64,
}

/// Per-label Gaussian prototypes; each instance sits near one prototype
/// and earns label `l` whenever its prototype similarity reaches 80% of
/// its best similarity. `overlap` scales both the noise around the
/// prototype and a label-flip rate (`0.15 * overlap`, capped at 0.4), so
/// larger values leave even the ridge prior with dense confusing sets.
/// Prior weights come from one ridge pass per label.
pub fn gen_multilabel(
    spec: &MultilabelSpec,
) -> Result<(MultiLabelDataset, PrivilegedPartition, DenseMatrix)> {
    if spec.labels < 2 {
        return Err(Error::InvalidConfig("need at least 2 labels".into()));
    }
    if spec.privileged > spec.labels {
        return Err(Error::InvalidConfig("privileged set larger than label set".into()));
    }
    if spec.overlap < 0.0 {
        return Err(Error::InvalidConfig("overlap must be >= 0".into()));
    }
    let mut rng = SplitMix64::stream(spec.seed, "multilabel-data");
    let t = spec.labels;
    let flip = (0.15 * spec.overlap).min(0.4);

    let mut prototypes = Vec::with_capacity(t);
    for _ in 0..t {
        prototypes.push((0..spec.m).map(|_| rng.next_normal()).collect::<Vec<f64>>());
    }

    let mut rows = Vec::with_capacity(spec.n);
    let mut signs: Vec<i8> = Vec::with_capacity(spec.n * t);
    for _ in 0..spec.n {
        let primary = rng.next_below(t);
        let mut x: Vec<f64> = prototypes[primary].clone();
        for v in &mut x {
            *v += spec.overlap * rng.next_normal();
        }
        let sims: Vec<f64> = prototypes
            .iter()
            .map(|p| crate::linalg::dot(p, &x))
            .collect();
        let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (l, &s) in sims.iter().enumerate() {
            let mut positive = l == primary || (best > 0.0 && s >= 0.8 * best);
            if flip > 0.0 && rng.next_f64() < flip {
                positive = !positive;
            }
            signs.push(if positive { 1 } else { -1 });
        }
        rows.push(x);
    }
    let data = MultiLabelDataset::new(DenseMatrix::from_rows(&rows)?, signs)?;

    // Ridge prior per label: (X^T X + I) w = X^T y.
    let mut gram = DenseMatrix::zeros(spec.m, spec.m);
    for i in 0..spec.n {
        let x = data.feature_row(i);
        for a in 0..spec.m {
            for b in 0..spec.m {
                gram.set(a, b, gram.get(a, b) + x[a] * x[b]);
            }
        }
    }
    for d in 0..spec.m {
        gram.set(d, d, gram.get(d, d) + 1.0);
    }
    let mut prior = DenseMatrix::zeros(t, spec.m);
    for l in 0..t {
        let mut xty = vec![0.0; spec.m];
        for i in 0..spec.n {
            let y = f64::from(data.sign(i, l));
            crate::linalg::axpy(&mut xty, y, data.feature_row(i));
        }
        let w = crate::linalg::solve_spd(&gram, &xty)?;
        prior.row_mut(l).copy_from_slice(&w);
    }

    let privileged: Vec<usize> = (0..spec.privileged).collect();
    let partition = PrivilegedPartition::new(t, &privileged)?;
    Ok((data, partition, prior))
}

/// Spec for the unequal-difficulty multi-task bundle.
#[derive(Debug, Clone)]
pub struct MultitaskSpec {
    pub tasks: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub feature_dim: usize,
    /// Per-task label flip probability; length must equal `tasks`.
    pub noise: Vec<f64>,
    /// Instances keep at least this many standard deviations of margin to
    /// every task boundary, so validation floors reflect the injected
    /// noise instead of boundary mass.
    pub margin: f64,
    pub seed: u64,
}

/// One binary head per task over shared features; parameters are the
/// concatenated head weights. Task difficulty is controlled by per-task
/// label noise on the training split; validation labels stay clean so the
/// validation loss measures how much the noise actually slowed the head
/// down.
struct LinearBceTask {
    head: usize,
    feature_dim: usize,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<f64>,
}

impl LinearBceTask {
    fn slice<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.head * self.feature_dim..(self.head + 1) * self.feature_dim]
    }

    fn split_data(&self, split: TaskSplit) -> (&[Vec<f64>], &[f64]) {
        match split {
            TaskSplit::Train => (&self.train_x, &self.train_y),
            TaskSplit::Val => (&self.val_x, &self.val_y),
        }
    }
}

impl TaskLoss for LinearBceTask {
    fn loss(&self, theta: &[f64], split: TaskSplit) -> f64 {
        let w = self.slice(theta);
        let (xs, ys) = self.split_data(split);
        let logits: Vec<f64> = xs.iter().map(|x| crate::linalg::dot(w, x)).collect();
        crate::nn::loss::bce_loss(&logits, ys).expect("matched lengths")
    }

    fn grad(&self, theta: &[f64], split: TaskSplit) -> Vec<f64> {
        let w = self.slice(theta);
        let (xs, ys) = self.split_data(split);
        let mut grad = vec![0.0; theta.len()];
        let head_grad =
            &mut grad[self.head * self.feature_dim..(self.head + 1) * self.feature_dim];
        for (x, &y) in xs.iter().zip(ys) {
            let p = crate::nn::loss::sigmoid(crate::linalg::dot(w, x));
            crate::linalg::axpy(head_grad, p - y, x);
        }
        grad
    }
}

pub fn gen_multitask(spec: &MultitaskSpec) -> Result<TaskBundle> {
    if spec.tasks < 2 {
        return Err(Error::InvalidConfig("need at least 2 tasks".into()));
    }
    if spec.noise.len() != spec.tasks {
        return Err(Error::InvalidConfig(
            "noise vector length must equal task count".into(),
        ));
    }
    if spec.noise.iter().any(|&p| !(0.0..=0.5).contains(&p)) {
        return Err(Error::InvalidConfig("noise rates must lie in [0, 0.5]".into()));
    }
    if !(0.0..=2.5).contains(&spec.margin) {
        return Err(Error::InvalidConfig("margin must lie in [0, 2.5]".into()));
    }
    let mut rng = SplitMix64::stream(spec.seed, "multitask-data");
    let m = spec.feature_dim;

    // Per-task label directions, drawn before the instances so the
    // instances can keep the margin buffer around every task boundary.
    // Without the buffer the validation floor is dominated by
    // near-boundary instances rather than the injected label noise.
    let directions: Vec<Vec<f64>> = (0..spec.tasks)
        .map(|_| (0..m).map(|_| rng.next_normal()).collect())
        .collect();
    let norms: Vec<f64> = directions.iter().map(|d| crate::linalg::norm2(d)).collect();
    let draw = |rng: &mut SplitMix64, n: usize| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
            let ok = directions
                .iter()
                .zip(&norms)
                .all(|(d, &nrm)| crate::linalg::dot(d, &x).abs() >= spec.margin * nrm);
            if ok {
                out.push(x);
            }
        }
        out
    };
    let train_x = draw(&mut rng, spec.n_train);
    let val_x = draw(&mut rng, spec.n_val);

    let mut tasks: Vec<Box<dyn TaskLoss>> = Vec::with_capacity(spec.tasks);
    for head in 0..spec.tasks {
        let direction = directions[head].clone();
        let clean = |x: &Vec<f64>| -> f64 {
            if crate::linalg::dot(&direction, x) >= 0.0 {
                1.0
            } else {
                0.0
            }
        };
        let train_y: Vec<f64> = train_x
            .iter()
            .map(|x| {
                let y = clean(x);
                if rng.next_f64() < spec.noise[head] {
                    1.0 - y
                } else {
                    y
                }
            })
            .collect();
        let val_y: Vec<f64> = val_x.iter().map(clean).collect();
        tasks.push(Box::new(LinearBceTask {
            head,
            feature_dim: m,
            train_x: train_x.clone(),
            train_y,
            val_x: val_x.clone(),
            val_y,
        }));
    }
    TaskBundle::new(tasks, spec.tasks * m)
}
