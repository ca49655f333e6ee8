//! Rating export.

use hnlevels_core::LevelSchema;

use crate::plan::ReviewPlan;
use crate::store::Effective;

pub const CATEGORY_COMPLETE_RECONTOURING: &str = "complete recontouring of segmentation necessary";
pub const CATEGORY_MAJOR_EDITING: &str = "major manual editing necessary";
pub const CATEGORY_MINOR_EDITING: &str = "minor manual editing necessary";
pub const CATEGORY_CLINICALLY_USABLE: &str = "segmentation clinically usable";

/// Category anchor for a 0-100 score. Band upper edges are inclusive.
pub fn category(score: f64) -> &'static str {
    if score <= 25.0 {
        CATEGORY_COMPLETE_RECONTOURING
    } else if score <= 50.0 {
        CATEGORY_MAJOR_EDITING
    } else if score <= 75.0 {
        CATEGORY_MINOR_EDITING
    } else {
        CATEGORY_CLINICALLY_USABLE
    }
}

pub const EXPORT_HEADER: [&str; 10] = [
    "rater",
    "case",
    "contour_set",
    "level",
    "level_name",
    "score",
    "category",
    "submitted_at",
    "time_on_case_s",
    "submissions",
];

/// One row per effective rating. Without `unblind` the contour-set column
/// holds the assignment token.
pub fn export_csv(
    plan: &ReviewPlan,
    schema: &LevelSchema,
    ratings: &[Effective],
    unblind: bool,
) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EXPORT_HEADER)?;
    let mut rows: Vec<(&str, &str, &str, &Effective)> = ratings
        .iter()
        .filter_map(|e| {
            let a = plan.assignments.get(&e.record.token)?;
            let set = if unblind { a.set.as_str() } else { e.record.token.as_str() };
            Some((e.record.rater.as_str(), a.case.as_str(), set, e))
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.1, a.2, a.3.record.level).cmp(&(b.0, b.1, b.2, b.3.record.level)));
    for (rater, case, set, e) in rows {
        let r = &e.record;
        w.write_record([
            rater,
            case,
            set,
            &r.level.to_string(),
            schema.name_of(r.level).unwrap_or(""),
            &r.score.to_string(),
            category(r.score),
            &r.submitted_at,
            &r.time_on_case_s.map(|t| t.to_string()).unwrap_or_default(),
            &e.submissions.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}
