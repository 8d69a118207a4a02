#![allow(dead_code)]

use std::fs;
use std::path::Path;

use explain_agree::rng::rng_from;
use rand::seq::SliceRandom;
use rand::Rng;

/// A 480-row table with the column layout and level vocabulary of the public
/// student-performance data: 142 high, 211 medium and 127 low performers.
pub fn student_table_csv() -> String {
    let mut rng = rng_from(2016, &[]);
    let mut classes: Vec<&str> = [("H", 142), ("M", 211), ("L", 127)]
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
        .collect();
    classes.shuffle(&mut rng);
    let nationalities = ["KW", "lebanon", "Egypt", "SaudiArabia", "USA", "Jordan", "Iraq"];
    let topics = ["IT", "Math", "Arabic", "Science", "English", "Quran", "Spanish", "French", "History", "Biology", "Chemistry", "Geology"];
    let stages = ["lowerlevel", "MiddleSchool", "HighSchool"];
    let grades = ["G-02", "G-04", "G-06", "G-07", "G-08", "G-10", "G-11", "G-12"];
    let mut out = String::from(
        "gender,NationalITy,PlaceofBirth,StageID,GradeID,SectionID,Topic,Semester,Relation,raisedhands,VisITedResources,AnnouncementsView,Discussion,ParentAnsweringSurvey,ParentschoolSatisfaction,StudentAbsenceDays,Class\n",
    );
    for (i, class) in classes.iter().enumerate() {
        let level = match *class {
            "H" => 2.0,
            "M" => 1.0,
            _ => 0.0,
        };
        let mut count = |base: f64| -> u32 {
            let v = base * (0.25 + 0.35 * level) + rng.random_range(-15.0..15.0);
            v.clamp(0.0, 100.0).round() as u32
        };
        let (hands, visits, announce, discuss) = (count(100.0), count(100.0), count(80.0), count(70.0));
        let good = rng.random_bool(0.3 + 0.2 * level);
        let nat = nationalities[i % nationalities.len()];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            if rng.random_bool(0.6) { "M" } else { "F" },
            nat,
            nat,
            stages[i % 3],
            grades[i % grades.len()],
            ["A", "B", "C"][i % 3],
            topics[i % topics.len()],
            if i % 2 == 0 { "F" } else { "S" },
            if rng.random_bool(0.3 + 0.2 * level) { "Mum" } else { "Father" },
            hands,
            visits,
            announce,
            discuss,
            if good { "Yes" } else { "No" },
            if good { "Good" } else { "Bad" },
            if rng.random_bool(0.2 + 0.35 * level) { "Under-7" } else { "Above-7" },
            class,
        ));
    }
    out
}

/// Every file under `dir`, as (relative path, contents), sorted by path.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Names of files that differ between two trees, including files present in
/// only one of them.
pub fn tree_diff(a: &[(String, Vec<u8>)], b: &[(String, Vec<u8>)]) -> Vec<String> {
    let mut diff = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                if x.1 != y.1 {
                    diff.push(x.0.clone());
                }
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                diff.push(x.0.clone());
                i += 1;
            }
            (Some(_), Some(y)) | (None, Some(y)) => {
                diff.push(y.0.clone());
                j += 1;
            }
            (Some(x), None) => {
                diff.push(x.0.clone());
                i += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    diff
}
