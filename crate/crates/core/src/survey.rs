//! Panel survey analysis: raking to population margins and the weighted
//! tables that quantify undisclosed vote intention.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::io::csv_to_io;

#[derive(Debug, thiserror::Error)]
pub enum SurveyError {
    #[error("survey sample is empty")]
    EmptySample,
    #[error("respondent {0} has a non-positive or non-finite weight")]
    Weight(String),
    #[error("margins for axis {axis} sum to {sum}, expected 1")]
    MarginSum { axis: String, sum: f64 },
    #[error("unknown raking axis {0}; expected age_group, gender, education or age_gender")]
    UnknownAxis(String),
    #[error("sample category {category} on axis {axis} has no target margin")]
    UnmappedCategory { axis: String, category: String },
    #[error("axis {0} has no category present in the sample")]
    EmptyAxis(String),
    #[error("invalid value {value:?} for {field}")]
    Parse { field: &'static str, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

macro_rules! labeled_enum {
    ($(#[$meta:meta])* $name:ident, $field:literal { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = SurveyError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label().eq_ignore_ascii_case(s))
                    .ok_or_else(|| SurveyError::Parse { field: $field, value: s.to_string() })
            }
        }
    };
}

labeled_enum!(
    /// Declared or reported vote.
    Candidate, "candidate" {
        AfCfk => "AF-CFK",
        MmMp => "MM-MP",
        Lavagna => "Lavagna",
        DelCano => "Del Cano",
        Espert => "Espert",
        GomezCenturion => "Gomez Centurion",
        BlankNull => "Blank/Null",
        UnknownOther => "Unknown/Other",
    }
);

labeled_enum!(AgeGroup, "age_group" {
    From16To30 => "16-30",
    From31To50 => "31-50",
    From51To65 => "51-65",
    Over65 => "65+",
});

labeled_enum!(Gender, "gender" {
    Male => "M",
    Female => "F",
});

labeled_enum!(Education, "education" {
    FullSecondary => "full secondary",
    IncompleteSecondary => "incomplete secondary",
    University => "full/incomplete university",
});

labeled_enum!(Image, "image" {
    Positive => "Positive",
    Negative => "Negative",
    Regular => "Regular",
    NsNc => "NS/NC",
});

/// Column of the transition table a post-election answer falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionColumn {
    Af,
    Mm,
    Other,
}

impl Candidate {
    pub fn column(self) -> TransitionColumn {
        match self {
            Candidate::AfCfk => TransitionColumn::Af,
            Candidate::MmMp => TransitionColumn::Mm,
            _ => TransitionColumn::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelResponse {
    pub respondent_id: String,
    pub pre_choice: Candidate,
    pub post_choice: Candidate,
    pub age_group: AgeGroup,
    pub gender: Gender,
    pub education: Education,
    pub image_cfk: Image,
    pub image_mm: Image,
    pub image_af: Image,
    pub weight: f64,
}

impl PanelResponse {
    /// `None` when the pre-election answer was unknown; those rows carry no disclosure status.
    pub fn revealed(&self) -> Option<bool> {
        (self.pre_choice != Candidate::UnknownOther).then(|| self.pre_choice == self.post_choice)
    }

    /// Category label on a raking axis.
    pub fn category(&self, axis: &str) -> Result<String, SurveyError> {
        Ok(match axis {
            "age_group" => self.age_group.label().to_string(),
            "gender" => self.gender.label().to_string(),
            "education" => self.education.label().to_string(),
            "age_gender" => format!("{}|{}", self.age_group.label(), self.gender.label()),
            other => return Err(SurveyError::UnknownAxis(other.to_string())),
        })
    }
}

pub fn read_panel_csv<R: Read>(input: R) -> Result<Vec<PanelResponse>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: PanelResponse = row?;
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(SurveyError::Weight(r.respondent_id));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_panel_csv<W: Write>(out: W, panel: &[PanelResponse]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in panel {
        wtr.serialize(r).map_err(csv_to_io)?;
    }
    wtr.flush()
}

/// Target fractions per axis and category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemographicMargins {
    pub axes: BTreeMap<String, BTreeMap<String, f64>>,
}

impl DemographicMargins {
    pub fn new(axes: BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self, SurveyError> {
        for (axis, cats) in &axes {
            let sum: f64 = cats.values().sum();
            if (sum - 1.0).abs() > 1e-9 || cats.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(SurveyError::MarginSum { axis: axis.clone(), sum });
            }
        }
        Ok(Self { axes })
    }

    /// CSV `axis,category,fraction`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SurveyError> {
        #[derive(Deserialize)]
        struct Row {
            axis: String,
            category: String,
            fraction: f64,
        }
        let mut axes: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        for row in rdr.deserialize() {
            let row: Row = row?;
            axes.entry(row.axis).or_default().insert(row.category, row.fraction);
        }
        Self::new(axes)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["axis", "category", "fraction"]).map_err(csv_to_io)?;
        for (axis, cats) in &self.axes {
            for (cat, f) in cats {
                wtr.write_record([axis, cat, &f.to_string()]).map_err(csv_to_io)?;
            }
        }
        wtr.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RakingWeights {
    /// Respondent id and weight, in sample order.
    pub weights: Vec<(String, f64)>,
    /// Full passes over all axes.
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute margin error per axis after the final pass.
    pub margin_errors: BTreeMap<String, f64>,
}

impl RakingWeights {
    pub fn apply(&self, panel: &mut [PanelResponse]) {
        for (r, (_, w)) in panel.iter_mut().zip(&self.weights) {
            r.weight = *w;
        }
    }

    pub fn max_error(&self) -> f64 {
        self.margin_errors.values().fold(0.0, |a, b| a.max(*b))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["respondent_id", "weight"]).map_err(csv_to_io)?;
        for (id, w) in &self.weights {
            wtr.write_record([id, &format!("{w:.9}")]).map_err(csv_to_io)?;
        }
        wtr.flush()
    }
}

struct RakeAxis {
    name: String,
    /// Category index of every respondent.
    member: Vec<usize>,
    targets: Vec<f64>,
}

fn prepare_axes(sample: &[PanelResponse], margins: &DemographicMargins) -> Result<Vec<RakeAxis>, SurveyError> {
    let mut axes = Vec::new();
    for (axis, cats) in &margins.axes {
        let labels: Vec<String> = sample.iter().map(|r| r.category(axis)).collect::<Result<_, _>>()?;
        let mut present: Vec<&String> = cats.keys().filter(|c| labels.contains(c)).collect();
        present.sort();
        for c in cats.keys().filter(|c| !present.contains(c)) {
            log::warn!("dropping margin category {c} on axis {axis}: absent from sample");
        }
        let total: f64 = present.iter().map(|c| cats[*c]).sum();
        if present.is_empty() || total <= 0.0 {
            return Err(SurveyError::EmptyAxis(axis.clone()));
        }
        let index: BTreeMap<&String, usize> = present.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let member = labels
            .iter()
            .map(|l| {
                index.get(l).copied().ok_or_else(|| SurveyError::UnmappedCategory {
                    axis: axis.clone(),
                    category: l.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        axes.push(RakeAxis {
            name: axis.clone(),
            member,
            targets: present.iter().map(|c| cats[*c] / total).collect(),
        });
    }
    Ok(axes)
}

fn axis_margins(axis: &RakeAxis, weights: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; axis.targets.len()];
    for (c, w) in axis.member.iter().zip(weights) {
        m[*c] += w;
    }
    let total: f64 = m.iter().sum();
    m.iter_mut().for_each(|x| *x /= total);
    m
}

fn axis_error(axis: &RakeAxis, weights: &[f64]) -> f64 {
    axis_margins(axis, weights)
        .iter()
        .zip(&axis.targets)
        .map(|(a, t)| (a - t).abs())
        .fold(0.0, f64::max)
}

/// Iterative proportional fitting starting from each respondent's current weight.
/// Returned weights have mean 1.
pub fn rake(
    sample: &[PanelResponse],
    margins: &DemographicMargins,
    tol: f64,
    max_iter: usize,
) -> Result<RakingWeights, SurveyError> {
    if sample.is_empty() {
        return Err(SurveyError::EmptySample);
    }
    if let Some(r) = sample.iter().find(|r| !(r.weight.is_finite() && r.weight > 0.0)) {
        return Err(SurveyError::Weight(r.respondent_id.clone()));
    }
    let axes = prepare_axes(sample, margins)?;
    let mut w: Vec<f64> = sample.iter().map(|r| r.weight).collect();
    let mut iterations = 0;
    let mut converged = axes.iter().all(|a| axis_error(a, &w) < tol);
    while !converged && iterations < max_iter {
        iterations += 1;
        for axis in &axes {
            let current = axis_margins(axis, &w);
            let factors: Vec<f64> = axis.targets.iter().zip(&current).map(|(t, c)| t / c).collect();
            for (wi, c) in w.iter_mut().zip(&axis.member) {
                *wi *= factors[*c];
            }
        }
        converged = axes.iter().all(|a| axis_error(a, &w) < tol);
    }
    // a sample already on target still counts one verification pass
    iterations = iterations.max(1);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|x| *x /= mean);
    Ok(RakingWeights {
        margin_errors: axes.iter().map(|a| (a.name.clone(), axis_error(a, &w))).collect(),
        weights: sample.iter().map(|r| r.respondent_id.clone()).zip(w).collect(),
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceField {
    Pre,
    Post,
}

/// Weighted fraction of respondents per candidate.
pub fn weighted_shares(responses: &[PanelResponse], field: ChoiceField) -> BTreeMap<Candidate, f64> {
    let total: f64 = responses.iter().map(|r| r.weight).sum();
    let mut out: BTreeMap<Candidate, f64> = BTreeMap::new();
    for r in responses {
        let c = match field {
            ChoiceField::Pre => r.pre_choice,
            ChoiceField::Post => r.post_choice,
        };
        *out.entry(c).or_default() += r.weight / total;
    }
    out
}

/// Whole-percent presentation rounding.
pub fn round_percent(x: f64) -> i64 {
    x.round() as i64
}

/// One pre-election answer and where its weight went. Percentages in full precision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRow {
    pub pre: Candidate,
    pub respondents: usize,
    pub af: f64,
    pub mm: f64,
    pub other: f64,
    /// Share that reported the same candidate afterwards; `None` for unknown answers.
    pub kept: Option<f64>,
}

pub fn transition_table(panel: &[PanelResponse]) -> Vec<TransitionRow> {
    let mut rows = Vec::new();
    for &pre in Candidate::ALL {
        let group: Vec<&PanelResponse> = panel.iter().filter(|r| r.pre_choice == pre).collect();
        let total: f64 = group.iter().map(|r| r.weight).sum();
        if group.is_empty() || total <= 0.0 {
            continue;
        }
        let pct = |f: &dyn Fn(&PanelResponse) -> bool| {
            100.0 * (group.iter().filter(|r| f(r)).map(|r| r.weight).sum::<f64>() / total)
        };
        rows.push(TransitionRow {
            pre,
            respondents: group.len(),
            af: pct(&|r| r.post_choice.column() == TransitionColumn::Af),
            mm: pct(&|r| r.post_choice.column() == TransitionColumn::Mm),
            other: pct(&|r| r.post_choice.column() == TransitionColumn::Other),
            kept: (pre != Candidate::UnknownOther).then(|| pct(&|r| r.post_choice == pre)),
        });
    }
    rows
}

pub fn write_transition_csv<W: Write>(out: W, rows: &[TransitionRow]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["pre_choice", "af_cfk", "mm_mp", "other", "kept_yes", "kept_no"])
        .map_err(csv_to_io)?;
    for r in rows {
        let (yes, no) = match r.kept {
            Some(k) => (round_percent(k).to_string(), round_percent(100.0 - k).to_string()),
            None => ("*".into(), "*".into()),
        };
        wtr.write_record([
            r.pre.label().to_string(),
            round_percent(r.af).to_string(),
            round_percent(r.mm).to_string(),
            round_percent(r.other).to_string(),
            yes,
            no,
        ])
        .map_err(csv_to_io)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisclosureRow {
    pub axis: &'static str,
    pub stratum: String,
    pub revealed: f64,
    pub not_revealed: f64,
    pub weight: f64,
}

/// Revealed / not revealed percentages by gender, age and education, then the total.
/// Respondents with an unknown pre-election answer are excluded.
pub fn disclosure_by_demographics(panel: &[PanelResponse]) -> Vec<DisclosureRow> {
    let known: Vec<(&PanelResponse, bool)> = panel.iter().filter_map(|r| r.revealed().map(|v| (r, v))).collect();
    let row = |axis: &'static str, stratum: String, filter: &dyn Fn(&PanelResponse) -> bool| {
        let (mut yes, mut all) = (0.0, 0.0);
        for (r, v) in known.iter().filter(|(r, _)| filter(r)) {
            all += r.weight;
            if *v {
                yes += r.weight;
            }
        }
        (all > 0.0).then(|| DisclosureRow {
            axis,
            stratum,
            revealed: 100.0 * (yes / all),
            not_revealed: 100.0 * ((all - yes) / all),
            weight: all,
        })
    };
    let mut rows = Vec::new();
    for &g in Gender::ALL {
        rows.extend(row("gender", g.label().into(), &|r| r.gender == g));
    }
    for &a in AgeGroup::ALL {
        rows.extend(row("age_group", a.label().into(), &|r| r.age_group == a));
    }
    for &e in Education::ALL {
        rows.extend(row("education", e.label().into(), &|r| r.education == e));
    }
    rows.extend(row("total", "Total".into(), &|_| true));
    rows
}

pub fn write_disclosure_csv<W: Write>(out: W, rows: &[DisclosureRow]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["axis", "stratum", "revealed", "not_revealed"]).map_err(csv_to_io)?;
    for r in rows {
        wtr.write_record([
            r.axis.to_string(),
            r.stratum.clone(),
            round_percent(r.revealed).to_string(),
            round_percent(r.not_revealed).to_string(),
        ])
        .map_err(csv_to_io)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    Cfk,
    Mm,
    Af,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::Cfk, Figure::Mm, Figure::Af];

    pub fn label(self) -> &'static str {
        match self {
            Figure::Cfk => "CFK",
            Figure::Mm => "MM",
            Figure::Af => "AF",
        }
    }

    pub fn image_of(self, r: &PanelResponse) -> Image {
        match self {
            Figure::Cfk => r.image_cfk,
            Figure::Mm => r.image_mm,
            Figure::Af => r.image_af,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRow {
    pub figure: Figure,
    pub revealed: bool,
    /// Percent per image in `Image::ALL` order.
    pub shares: [f64; 4],
}

pub fn image_table(panel: &[PanelResponse]) -> Vec<ImageRow> {
    let mut rows = Vec::new();
    for fig in Figure::ALL {
        for revealed in [true, false] {
            let group: Vec<&PanelResponse> = panel.iter().filter(|r| r.revealed() == Some(revealed)).collect();
            let total: f64 = group.iter().map(|r| r.weight).sum();
            if total <= 0.0 {
                continue;
            }
            let mut shares = [0.0; 4];
            for r in &group {
                let i = Image::ALL.iter().position(|x| *x == fig.image_of(r)).unwrap();
                shares[i] += 100.0 * (r.weight / total);
            }
            rows.push(ImageRow { figure: fig, revealed, shares });
        }
    }
    rows
}

pub fn write_image_csv<W: Write>(out: W, rows: &[ImageRow]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["figure", "group", "positive", "negative", "regular", "ns_nc"])
        .map_err(csv_to_io)?;
    for r in rows {
        let mut rec = vec![
            r.figure.label().to_string(),
            if r.revealed { "Revealed" } else { "Not Revealed" }.to_string(),
        ];
        rec.extend(r.shares.iter().map(|s| round_percent(*s).to_string()));
        wtr.write_record(&rec).map_err(csv_to_io)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PyramidCell {
    pub age_group: AgeGroup,
    pub gender: Gender,
    pub weight: f64,
    pub fraction: f64,
}

/// Weighted age by gender distribution; every cell is present, empty ones at zero.
pub fn demographic_pyramid(panel: &[PanelResponse]) -> Vec<PyramidCell> {
    let total: f64 = panel.iter().map(|r| r.weight).sum();
    let mut cells = Vec::new();
    for &a in AgeGroup::ALL {
        for &g in Gender::ALL {
            let weight: f64 = panel
                .iter()
                .filter(|r| r.age_group == a && r.gender == g)
                .map(|r| r.weight)
                .sum();
            cells.push(PyramidCell {
                age_group: a,
                gender: g,
                weight,
                fraction: if total > 0.0 { weight / total } else { 0.0 },
            });
        }
    }
    cells
}

/// Pyramid implied by margins: the joint `age_gender` axis when present, else the product of the two marginals.
pub fn pyramid_from_margins(margins: &DemographicMargins) -> Vec<PyramidCell> {
    let joint = margins.axes.get("age_gender");
    let age = margins.axes.get("age_group");
    let gender = margins.axes.get("gender");
    let mut cells = Vec::new();
    for &a in AgeGroup::ALL {
        for &g in Gender::ALL {
            let fraction = match joint {
                Some(j) => j.get(&format!("{}|{}", a.label(), g.label())).copied().unwrap_or(0.0),
                None => {
                    age.and_then(|m| m.get(a.label())).copied().unwrap_or(0.0)
                        * gender.and_then(|m| m.get(g.label())).copied().unwrap_or(0.0)
                }
            };
            cells.push(PyramidCell { age_group: a, gender: g, weight: fraction, fraction });
        }
    }
    cells
}

pub fn write_pyramid_csv<W: Write>(out: W, cells: &[PyramidCell]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["age_group", "gender", "weight", "fraction"]).map_err(csv_to_io)?;
    for c in cells {
        wtr.write_record([
            c.age_group.label().to_string(),
            c.gender.label().to_string(),
            format!("{:.6}", c.weight),
            format!("{:.6}", c.fraction),
        ])
        .map_err(csv_to_io)?;
    }
    wtr.flush()
}
