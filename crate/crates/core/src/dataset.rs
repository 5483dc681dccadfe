//! Data model and file ingestion for ground truth, predictions, and
//! attribute-based slicing (min-area, occlusion, time of day).
//!
//! Filters never delete annotated people: instances that should not count
//! during evaluation are flagged `ignore` so that detections overlapping
//! them are neither rewarded nor penalized. Time-of-day slicing drops whole
//! images because the attribute is per-image.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Class name that carries group annotations.
pub const PERSON_CLASS: &str = "person";

/// Skin-tone group label for a person box.
///
/// `Ls` and `Ds` bin the Fitzpatrick scale into types 1-3 and 4-6;
/// `Unknown` marks people whose skin tone cannot be determined from the
/// crop; `NotPerson` marks boxes that do not actually contain a person.
///
/// The derived ordering (`Ls < Ds < Unknown < NotPerson`) is the canonical
/// letter order `L < D < U < N` used for vote-pattern keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupLabel {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "DS")]
    Ds,
    #[serde(rename = "U")]
    Unknown,
    #[serde(rename = "N")]
    NotPerson,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 4] = [
        GroupLabel::Ls,
        GroupLabel::Ds,
        GroupLabel::Unknown,
        GroupLabel::NotPerson,
    ];

    /// Single-letter form used in vote files and histogram patterns.
    pub fn letter(self) -> char {
        match self {
            GroupLabel::Ls => 'L',
            GroupLabel::Ds => 'D',
            GroupLabel::Unknown => 'U',
            GroupLabel::NotPerson => 'N',
        }
    }

    pub fn from_letter(c: char) -> Result<Self> {
        match c {
            'L' => Ok(GroupLabel::Ls),
            'D' => Ok(GroupLabel::Ds),
            'U' => Ok(GroupLabel::Unknown),
            'N' => Ok(GroupLabel::NotPerson),
            other => Err(Error::validation(format!(
                "unknown group letter {other:?} (expected one of L, D, U, N)"
            ))),
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupLabel::Ls => "LS",
            GroupLabel::Ds => "DS",
            GroupLabel::Unknown => "U",
            GroupLabel::NotPerson => "N",
        };
        f.write_str(s)
    }
}

/// Per-image capture time attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
    #[default]
    Other,
}

impl TimeOfDay {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(TimeOfDay::Day),
            "night" => Ok(TimeOfDay::Night),
            "other" => Ok(TimeOfDay::Other),
            other => Err(Error::validation(format!(
                "unknown time_of_day value {other:?} (expected day, night, or other)"
            ))),
        }
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TimeOfDay::Day => "day",
            TimeOfDay::Night => "night",
            TimeOfDay::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub time_of_day: TimeOfDay,
}

/// One annotated ground-truth box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub id: String,
    pub image_id: String,
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupLabel>,
    #[serde(default)]
    pub occluded: bool,
    /// Excluded from both true-positive and false-positive accounting.
    /// Set by the min-area and occlusion filters; never unset by them.
    #[serde(default)]
    pub ignore: bool,
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
}

/// A validated set of images and ground-truth instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub instances: Vec<GroundTruthInstance>,
}

impl Dataset {
    /// Checks every documented invariant, naming the offending record.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for image in &self.images {
            if image.width == 0 || image.height == 0 {
                return Err(Error::validation(format!(
                    "image {:?} has zero width or height",
                    image.id
                )));
            }
            if !image_ids.insert(image.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate image id {:?}",
                    image.id
                )));
            }
        }
        let mut instance_ids = HashSet::new();
        for instance in &self.instances {
            if !instance_ids.insert(instance.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate instance id {:?}",
                    instance.id
                )));
            }
            if !image_ids.contains(instance.image_id.as_str()) {
                return Err(Error::validation(format!(
                    "instance {:?} references missing image {:?}",
                    instance.id, instance.image_id
                )));
            }
            if instance.group.is_some() && instance.class_name != PERSON_CLASS {
                return Err(Error::validation(format!(
                    "instance {:?} has a group label but class {:?}; groups apply only to {PERSON_CLASS:?}",
                    instance.id, instance.class_name
                )));
            }
        }
        Ok(())
    }

    /// Image lookup by id.
    pub fn image_index(&self) -> HashMap<&str, &ImageRecord> {
        self.images.iter().map(|im| (im.id.as_str(), im)).collect()
    }

    /// Instances grouped by image, preserving file order within an image.
    pub fn instances_by_image(&self) -> HashMap<&str, Vec<&GroundTruthInstance>> {
        let mut map: HashMap<&str, Vec<&GroundTruthInstance>> = HashMap::new();
        for instance in &self.instances {
            map.entry(instance.image_id.as_str())
                .or_default()
                .push(instance);
        }
        map
    }

    /// Counts person instances per group label, skipping unlabeled people.
    pub fn group_counts(&self) -> HashMap<GroupLabel, usize> {
        let mut counts = HashMap::new();
        for instance in &self.instances {
            if let Some(group) = instance.group {
                *counts.entry(group).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Loads and validates the canonical ground-truth JSON file.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dataset: Dataset = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    dataset.validate()?;
    Ok(dataset)
}

/// Loads a detection JSON array, preserving file order.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let detections: Vec<Detection> =
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    for (index, det) in detections.iter().enumerate() {
        if !(0.0..=1.0).contains(&det.score) || !det.score.is_finite() {
            return Err(Error::validation(format!(
                "detection #{index} on image {:?}: score {} outside [0, 1]",
                det.image_id, det.score
            )));
        }
    }
    Ok(detections)
}

/// Flags person instances with box area below `threshold` square pixels as
/// ignore. The boundary is inclusive: an instance with area exactly equal
/// to the threshold is kept. Non-person instances are unchanged.
pub fn apply_min_area_filter(dataset: &Dataset, threshold: f64) -> Dataset {
    let mut out = dataset.clone();
    for instance in &mut out.instances {
        if instance.class_name == PERSON_CLASS && instance.bbox.area() < threshold {
            instance.ignore = true;
        }
    }
    out
}

/// An attribute-based dataset slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSpec {
    /// Flags occluded person instances as ignore.
    ExcludeOccluded,
    /// Keeps only images (and their instances) with the given time of day.
    TimeOfDay(TimeOfDay),
}

impl SliceSpec {
    /// Parses the CLI form `attribute=value`: `time_of_day=day|night|other`
    /// or `occluded=exclude`.
    pub fn parse(s: &str) -> Result<Self> {
        let (attr, value) = s.split_once('=').ok_or_else(|| {
            Error::validation(format!("slice {s:?} is not of the form attribute=value"))
        })?;
        match attr {
            "time_of_day" => Ok(SliceSpec::TimeOfDay(TimeOfDay::parse(value)?)),
            "occluded" => match value {
                "exclude" => Ok(SliceSpec::ExcludeOccluded),
                other => Err(Error::validation(format!(
                    "unknown occluded slice value {other:?} (expected exclude)"
                ))),
            },
            other => Err(Error::validation(format!(
                "unknown slice attribute {other:?} (expected time_of_day or occluded)"
            ))),
        }
    }
}

/// Applies one slice. Occlusion slicing only toggles `ignore`; time-of-day
/// slicing drops whole images. Box coordinates are never modified, and both
/// forms are idempotent.
pub fn slice(dataset: &Dataset, spec: &SliceSpec) -> Dataset {
    match spec {
        SliceSpec::ExcludeOccluded => {
            let mut out = dataset.clone();
            for instance in &mut out.instances {
                if instance.class_name == PERSON_CLASS && instance.occluded {
                    instance.ignore = true;
                }
            }
            out
        }
        SliceSpec::TimeOfDay(value) => {
            let keep: HashSet<&str> = dataset
                .images
                .iter()
                .filter(|im| im.time_of_day == *value)
                .map(|im| im.id.as_str())
                .collect();
            Dataset {
                images: dataset
                    .images
                    .iter()
                    .filter(|im| keep.contains(im.id.as_str()))
                    .cloned()
                    .collect(),
                instances: dataset
                    .instances
                    .iter()
                    .filter(|inst| keep.contains(inst.image_id.as_str()))
                    .cloned()
                    .collect(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn person(id: &str, image: &str, bbox: BBox, group: Option<GroupLabel>) -> GroundTruthInstance {
        GroundTruthInstance {
            id: id.to_string(),
            image_id: image.to_string(),
            bbox,
            class_name: PERSON_CLASS.to_string(),
            group,
            occluded: false,
            ignore: false,
        }
    }

    fn image(id: &str, tod: TimeOfDay) -> ImageRecord {
        ImageRecord {
            id: id.to_string(),
            width: 1280,
            height: 720,
            time_of_day: tod,
        }
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_single_person_roundtrip() {
        let file = write_temp(
            r#"{
  "images": [{"id": "im1", "width": 1280, "height": 720, "time_of_day": "day"}],
  "instances": [{"id": "p1", "image_id": "im1", "bbox": [0, 0, 120, 120],
                 "class": "person", "group": "DS", "occluded": false}]
}"#,
        );
        let ds = load_ground_truth(file.path()).unwrap();
        assert_eq!(ds.instances.len(), 1);
        assert_eq!(ds.instances[0].group, Some(GroupLabel::Ds));
        assert!(!ds.instances[0].ignore);
    }

    #[test]
    fn load_rejects_missing_image_reference() {
        let file = write_temp(
            r#"{
  "images": [],
  "instances": [{"id": "p1", "image_id": "ghost", "bbox": [0, 0, 10, 10], "class": "person"}]
}"#,
        );
        let err = load_ground_truth(file.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("ghost"), "{msg}");
    }

    #[test]
    fn load_reports_parse_errors_with_line_context() {
        let file = write_temp("{\n  \"images\": [\n    {\"id\": }\n  ]\n}");
        let err = load_ground_truth(file.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn load_train_split_group_counts() {
        // A file shaped like the full train split: 3513 consensus persons
        // partitioning into 2724 LS + 789 DS.
        let mut images = Vec::new();
        let mut instances = Vec::new();
        images.push(image("im0", TimeOfDay::Day));
        for i in 0..3513 {
            let group = if i < 2724 {
                GroupLabel::Ls
            } else {
                GroupLabel::Ds
            };
            instances.push(person(
                &format!("p{i}"),
                "im0",
                BBox::new(0.0, 0.0, 120.0, 120.0).unwrap(),
                Some(group),
            ));
        }
        let ds = Dataset { images, instances };
        let file = write_temp(&serde_json::to_string(&ds).unwrap());
        let loaded = load_ground_truth(file.path()).unwrap();
        let counts = loaded.group_counts();
        assert_eq!(counts.get(&GroupLabel::Ls), Some(&2724));
        assert_eq!(counts.get(&GroupLabel::Ds), Some(&789));
    }

    #[test]
    fn load_detections_examples() {
        let empty = write_temp("[]");
        assert!(load_detections(empty.path()).unwrap().is_empty());

        let bad = write_temp(
            r#"[{"image_id": "im1", "bbox": [0, 0, 10, 10], "class": "person", "score": 1.2}]"#,
        );
        let err = load_detections(bad.path()).unwrap_err();
        assert!(err.to_string().contains("1.2"), "{err}");
    }

    #[test]
    fn min_area_filter_boundary_is_inclusive() {
        let ds = Dataset {
            images: vec![image("im1", TimeOfDay::Day)],
            instances: vec![
                person(
                    "kept",
                    "im1",
                    BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                    None,
                ),
                person(
                    "small",
                    "im1",
                    BBox::new(0.0, 0.0, 99.0, 100.0).unwrap(),
                    None,
                ),
            ],
        };
        let filtered = apply_min_area_filter(&ds, 10_000.0);
        assert!(!filtered.instances[0].ignore, "area == threshold is kept");
        assert!(filtered.instances[1].ignore, "9900 < 10000 is ignored");

        let untouched = apply_min_area_filter(&ds, 0.0);
        assert!(untouched.instances.iter().all(|i| !i.ignore));
    }

    #[test]
    fn min_area_filter_leaves_non_persons_alone() {
        let mut car = person("c1", "im1", BBox::new(0.0, 0.0, 5.0, 5.0).unwrap(), None);
        car.class_name = "car".to_string();
        let ds = Dataset {
            images: vec![image("im1", TimeOfDay::Day)],
            instances: vec![car],
        };
        let filtered = apply_min_area_filter(&ds, 10_000.0);
        assert!(!filtered.instances[0].ignore);
    }

    #[test]
    fn slice_parse_errors() {
        assert!(SliceSpec::parse("weather=rain").is_err());
        assert!(SliceSpec::parse("time_of_day=dawn").is_err());
        assert!(SliceSpec::parse("occluded").is_err());
        assert_eq!(
            SliceSpec::parse("time_of_day=day").unwrap(),
            SliceSpec::TimeOfDay(TimeOfDay::Day)
        );
    }

    #[test]
    fn day_night_partition_counts() {
        // Validation-split shaped fixture: Day LS 297 / DS 75, Night LS 69 / DS 15.
        let mut images = vec![
            image("day", TimeOfDay::Day),
            image("night", TimeOfDay::Night),
        ];
        images.push(image("other", TimeOfDay::Other));
        let mut instances = Vec::new();
        let mut push = |n: usize, img: &str, group: GroupLabel, tag: &str| {
            let start = instances.len();
            for i in 0..n {
                instances.push(person(
                    &format!("{tag}{}", start + i),
                    img,
                    BBox::new(0.0, 0.0, 120.0, 120.0).unwrap(),
                    Some(group),
                ));
            }
        };
        push(297, "day", GroupLabel::Ls, "dl");
        push(75, "day", GroupLabel::Ds, "dd");
        push(69, "night", GroupLabel::Ls, "nl");
        push(15, "night", GroupLabel::Ds, "nd");
        let ds = Dataset { images, instances };
        ds.validate().unwrap();

        let day = slice(&ds, &SliceSpec::TimeOfDay(TimeOfDay::Day));
        let night = slice(&ds, &SliceSpec::TimeOfDay(TimeOfDay::Night));
        let day_counts = day.group_counts();
        let night_counts = night.group_counts();
        assert_eq!(day_counts.get(&GroupLabel::Ls), Some(&297));
        assert_eq!(day_counts.get(&GroupLabel::Ds), Some(&75));
        assert_eq!(night_counts.get(&GroupLabel::Ls), Some(&69));
        assert_eq!(night_counts.get(&GroupLabel::Ds), Some(&15));
        // 297 + 69 = 366 LS candidates across the two splits.
        assert_eq!(
            day_counts[&GroupLabel::Ls] + night_counts[&GroupLabel::Ls],
            366
        );
    }

    #[test]
    fn occlusion_slice_is_identity_without_occluded_persons() {
        let ds = Dataset {
            images: vec![image("im1", TimeOfDay::Day)],
            instances: vec![person(
                "p1",
                "im1",
                BBox::new(0.0, 0.0, 120.0, 120.0).unwrap(),
                Some(GroupLabel::Ls),
            )],
        };
        assert_eq!(slice(&ds, &SliceSpec::ExcludeOccluded), ds);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let tod = prop_oneof![
            Just(TimeOfDay::Day),
            Just(TimeOfDay::Night),
            Just(TimeOfDay::Other)
        ];
        let images = proptest::collection::vec(tod, 1..6).prop_map(|tods| {
            tods.into_iter()
                .enumerate()
                .map(|(i, t)| image(&format!("im{i}"), t))
                .collect::<Vec<_>>()
        });
        images.prop_flat_map(|images| {
            let n_images = images.len();
            let instance = (
                0..n_images,
                0.0f64..500.0,
                0.0f64..500.0,
                10.0f64..200.0,
                10.0f64..200.0,
                proptest::bool::ANY,
                prop_oneof![
                    Just(None),
                    Just(Some(GroupLabel::Ls)),
                    Just(Some(GroupLabel::Ds)),
                    Just(Some(GroupLabel::Unknown))
                ],
            );
            proptest::collection::vec(instance, 0..20).prop_map(move |specs| {
                let instances = specs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (img, x, y, w, h, occluded, group))| {
                        let mut p = person(
                            &format!("p{i}"),
                            &format!("im{img}"),
                            BBox::new(x, y, x + w, y + h).unwrap(),
                            group,
                        );
                        p.occluded = occluded;
                        p
                    })
                    .collect();
                Dataset {
                    images: images.clone(),
                    instances,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn detection_files_roundtrip_preserving_order(
            specs in proptest::collection::vec(
                (0u8..4, 0.0f64..500.0, 0.0f64..400.0, 1.0f64..100.0, 1.0f64..100.0, 0u32..=1000),
                0..25,
            )
        ) {
            let dets: Vec<Detection> = specs
                .into_iter()
                .map(|(img, x, y, w, h, s)| Detection {
                    image_id: format!("im{img}"),
                    bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                    class_name: PERSON_CLASS.to_string(),
                    score: s as f64 / 1000.0,
                })
                .collect();
            let file = write_temp(&serde_json::to_string(&dets).unwrap());
            let loaded = load_detections(file.path()).unwrap();
            prop_assert_eq!(loaded, dets);
        }

        #[test]
        fn time_slices_partition_instances(ds in arb_dataset()) {
            let parts = [
                slice(&ds, &SliceSpec::TimeOfDay(TimeOfDay::Day)),
                slice(&ds, &SliceSpec::TimeOfDay(TimeOfDay::Night)),
                slice(&ds, &SliceSpec::TimeOfDay(TimeOfDay::Other)),
            ];
            let mut seen = HashSet::new();
            let mut total = 0usize;
            for part in &parts {
                for instance in &part.instances {
                    prop_assert!(seen.insert(instance.id.clone()), "instance in two slices");
                    total += 1;
                }
            }
            prop_assert_eq!(total, ds.instances.len());
        }

        #[test]
        fn filters_idempotent_and_monotone(ds in arb_dataset(),
                                           t1 in 0.0f64..50_000.0,
                                           t2 in 0.0f64..50_000.0) {
            let once = apply_min_area_filter(&ds, t1);
            let twice = apply_min_area_filter(&once, t1);
            prop_assert_eq!(&once, &twice);

            let occluded_once = slice(&ds, &SliceSpec::ExcludeOccluded);
            let occluded_twice = slice(&occluded_once, &SliceSpec::ExcludeOccluded);
            prop_assert_eq!(&occluded_once, &occluded_twice);

            // Larger threshold ignores a superset of instances, and filters
            // never touch coordinates.
            let (hi, lo) = if t1 >= t2 { (t1, t2) } else { (t2, t1) };
            let big = apply_min_area_filter(&ds, hi);
            let small = apply_min_area_filter(&ds, lo);
            for (b, s) in big.instances.iter().zip(&small.instances) {
                prop_assert!(b.ignore || !s.ignore);
                prop_assert_eq!(b.bbox, s.bbox);
            }
        }
    }
}
