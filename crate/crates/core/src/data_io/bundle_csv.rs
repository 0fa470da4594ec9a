//! CSV and manifest serialization of a [`DatasetBundle`].
//!
//! Floats are written with `Display`, which emits the shortest string that
//! parses back to the same value, so save/load/save is byte-stable.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{
    DataError, DatasetBundle, Manifest, Offer, DONORS_FILE, MANIFEST_FILE, OFFERS_FILE,
    PATIENTS_FILE, SCHEMA_VERSION,
};
use crate::model::{
    BloodMatch, BloodType, DonorId, DonorProfile, Location, PairCovariates, PatientId,
    PatientProfile, Zone,
};
use crate::simulator::FinalDecision;

const DONOR_COLUMNS: [&str; 12] = [
    "donor_id",
    "age",
    "weight",
    "height",
    "pf_ratio",
    "heavy_alcohol",
    "iv_drug",
    "increased_risk",
    "blood_type",
    "x",
    "y",
    "run_size",
];

const PATIENT_COLUMNS: [&str; 13] = [
    "patient_id",
    "las",
    "waiting_time",
    "bmi",
    "female",
    "diabetic",
    "prev_transplant",
    "blood_type",
    "age",
    "height",
    "weight",
    "x",
    "y",
];

const OFFER_COLUMNS: [&str; 11] = [
    "donor_id",
    "patient_id",
    "sequence_number",
    "provisional_yes",
    "final_decision",
    "blood_match",
    "distance_nm",
    "zone",
    "age_diff",
    "height_diff",
    "weight_diff",
];

const CHECKSUM_PREFIX: &str = "sha256.";

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn decision_str(d: Option<FinalDecision>) -> &'static str {
    match d {
        Some(FinalDecision::Accept) => "A",
        Some(FinalDecision::Reject) => "R",
        None => "NA",
    }
}

fn write_csv<const N: usize>(
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn donors_csv(donors: &[DonorProfile]) -> Vec<u8> {
    write_csv(
        DONOR_COLUMNS,
        donors.iter().map(|d| {
            [
                d.id.0.to_string(),
                d.age.to_string(),
                d.weight.to_string(),
                d.height.to_string(),
                d.pf_ratio.to_string(),
                flag(d.heavy_alcohol).into(),
                flag(d.iv_drug).into(),
                flag(d.increased_risk).into(),
                d.blood_type.to_string(),
                d.location.x.to_string(),
                d.location.y.to_string(),
                d.run_size.to_string(),
            ]
        }),
    )
}

pub fn patients_csv(patients: &[PatientProfile]) -> Vec<u8> {
    write_csv(
        PATIENT_COLUMNS,
        patients.iter().map(|p| {
            [
                p.id.0.to_string(),
                p.las.to_string(),
                p.waiting_time.to_string(),
                p.bmi.to_string(),
                flag(p.female).into(),
                flag(p.diabetic).into(),
                flag(p.prev_transplant).into(),
                p.blood_type.to_string(),
                p.age.to_string(),
                p.height.to_string(),
                p.weight.to_string(),
                p.location.x.to_string(),
                p.location.y.to_string(),
            ]
        }),
    )
}

pub fn offers_csv(offers: &[Offer]) -> Vec<u8> {
    write_csv(
        OFFER_COLUMNS,
        offers.iter().map(|o| {
            [
                o.donor_id.0.to_string(),
                o.patient_id.0.to_string(),
                o.sequence_number.to_string(),
                flag(o.provisional_yes).into(),
                decision_str(o.final_decision).into(),
                o.pair.blood_match.0.to_string(),
                o.pair.distance_nm.to_string(),
                o.pair.zone.as_str().into(),
                o.pair.age_diff.to_string(),
                o.pair.height_diff.to_string(),
                o.pair.weight_diff.to_string(),
            ]
        }),
    )
}

/// The four files of a bundle as bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedBundle {
    pub donors: Vec<u8>,
    pub patients: Vec<u8>,
    pub offers: Vec<u8>,
    pub manifest: Vec<u8>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders all files; the manifest gains a checksum line per CSV file.
pub fn render_bundle(bundle: &DatasetBundle) -> RenderedBundle {
    let donors = donors_csv(&bundle.donors);
    let patients = patients_csv(&bundle.patients);
    let offers = offers_csv(&bundle.offers);
    let mut text = String::new();
    for (k, v) in &bundle.manifest.entries {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (name, bytes) in [
        (DONORS_FILE, &donors),
        (PATIENTS_FILE, &patients),
        (OFFERS_FILE, &offers),
    ] {
        text.push_str(&format!("{CHECKSUM_PREFIX}{name}={}\n", sha_hex(bytes)));
    }
    RenderedBundle {
        donors,
        patients,
        offers,
        manifest: text.into_bytes(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let r = render_bundle(bundle);
    for (name, bytes) in [
        (DONORS_FILE, &r.donors),
        (PATIENTS_FILE, &r.patients),
        (OFFERS_FILE, &r.offers),
        (MANIFEST_FILE, &r.manifest),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Hex SHA-256 of a saved bundle's manifest. The manifest carries checksums
/// of the CSV files, so equal hashes imply identical content.
pub fn manifest_hash(dir: &Path) -> Result<String, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    Ok(sha_hex(&bytes))
}

/// Column lookup for one CSV file.
struct Table<'a> {
    file: &'a str,
    index: HashMap<String, usize>,
}

impl<'a> Table<'a> {
    fn new(
        file: &'a str,
        headers: &csv::StringRecord,
        required: &[&str],
    ) -> Result<Table<'a>, DataError> {
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(k, h)| (h.trim().to_string(), k))
            .collect();
        if let Some(missing) = required.iter().find(|c| !index.contains_key(**c)) {
            return Err(DataError::MissingColumn {
                file: file.to_string(),
                column: missing.to_string(),
            });
        }
        Ok(Table { file, index })
    }

    fn raw<'r>(&self, row: &'r csv::StringRecord, column: &str) -> &'r str {
        row.get(self.index[column]).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, row: &csv::StringRecord, column: &str) -> Result<T, DataError>
    where
        T::Err: std::fmt::Display,
    {
        let value = self.raw(row, column);
        value.trim().parse::<T>().map_err(|e| DataError::Parse {
            file: self.file.to_string(),
            line: line_of(row),
            column: column.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
    }

    fn real(&self, row: &csv::StringRecord, column: &str) -> Result<f64, DataError> {
        let v: f64 = self.parse(row, column)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad(row, column, "not a finite number"))
        }
    }

    fn flag(&self, row: &csv::StringRecord, column: &str) -> Result<bool, DataError> {
        match self.raw(row, column).trim() {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(self.bad(row, column, "expected 0 or 1")),
        }
    }

    fn bad(&self, row: &csv::StringRecord, column: &str, reason: &str) -> DataError {
        DataError::Parse {
            file: self.file.to_string(),
            line: line_of(row),
            column: column.to_string(),
            value: self.raw(row, column).to_string(),
            reason: reason.to_string(),
        }
    }
}

fn line_of(row: &csv::StringRecord) -> u64 {
    row.position().map(|p| p.line()).unwrap_or(0)
}

fn read_rows<T>(
    file: &str,
    bytes: &[u8],
    columns: &[&str],
    mut parse: impl FnMut(&Table, &csv::StringRecord) -> Result<T, DataError>,
) -> Result<Vec<T>, DataError> {
    let csv_err = |source| DataError::Csv {
        file: file.to_string(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let table = Table::new(file, &headers, columns)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        out.push(parse(&table, &row)?);
    }
    Ok(out)
}

pub fn parse_donors(bytes: &[u8]) -> Result<Vec<DonorProfile>, DataError> {
    read_rows(DONORS_FILE, bytes, &DONOR_COLUMNS, |t, r| {
        Ok(DonorProfile {
            id: DonorId(t.parse(r, "donor_id")?),
            age: t.real(r, "age")?,
            weight: t.real(r, "weight")?,
            height: t.real(r, "height")?,
            pf_ratio: t.real(r, "pf_ratio")?,
            heavy_alcohol: t.flag(r, "heavy_alcohol")?,
            iv_drug: t.flag(r, "iv_drug")?,
            increased_risk: t.flag(r, "increased_risk")?,
            blood_type: t.parse::<BloodType>(r, "blood_type")?,
            location: Location {
                x: t.real(r, "x")?,
                y: t.real(r, "y")?,
            },
            run_size: t.parse(r, "run_size")?,
        })
    })
}

pub fn parse_patients(bytes: &[u8]) -> Result<Vec<PatientProfile>, DataError> {
    read_rows(PATIENTS_FILE, bytes, &PATIENT_COLUMNS, |t, r| {
        Ok(PatientProfile {
            id: PatientId(t.parse(r, "patient_id")?),
            las: t.real(r, "las")?,
            waiting_time: t.real(r, "waiting_time")?,
            bmi: t.real(r, "bmi")?,
            female: t.flag(r, "female")?,
            diabetic: t.flag(r, "diabetic")?,
            prev_transplant: t.flag(r, "prev_transplant")?,
            blood_type: t.parse::<BloodType>(r, "blood_type")?,
            age: t.real(r, "age")?,
            height: t.real(r, "height")?,
            weight: t.real(r, "weight")?,
            location: Location {
                x: t.real(r, "x")?,
                y: t.real(r, "y")?,
            },
        })
    })
}

pub fn parse_offers(bytes: &[u8]) -> Result<Vec<Offer>, DataError> {
    read_rows(OFFERS_FILE, bytes, &OFFER_COLUMNS, |t, r| {
        let final_decision = match t.raw(r, "final_decision").trim() {
            "A" => Some(FinalDecision::Accept),
            "R" => Some(FinalDecision::Reject),
            "NA" => None,
            _ => return Err(t.bad(r, "final_decision", "expected A, R or NA")),
        };
        let blood: u8 = t.parse(r, "blood_match")?;
        if blood > 2 {
            return Err(t.bad(r, "blood_match", "expected 0, 1 or 2"));
        }
        let distance_nm = t.real(r, "distance_nm")?;
        if distance_nm < 0.0 {
            return Err(t.bad(r, "distance_nm", "negative distance"));
        }
        Ok(Offer {
            donor_id: DonorId(t.parse(r, "donor_id")?),
            patient_id: PatientId(t.parse(r, "patient_id")?),
            sequence_number: t.parse(r, "sequence_number")?,
            provisional_yes: t.flag(r, "provisional_yes")?,
            final_decision,
            pair: PairCovariates {
                blood_match: BloodMatch(blood),
                distance_nm,
                zone: t.parse::<Zone>(r, "zone")?,
                age_diff: t.real(r, "age_diff")?,
                height_diff: t.real(r, "height_diff")?,
                weight_diff: t.real(r, "weight_diff")?,
            },
        })
    })
}

/// Parses manifest text. Returns the metadata entries and the recorded
/// checksums separately.
pub fn parse_manifest(text: &str) -> Result<(Manifest, HashMap<String, String>), DataError> {
    let mut manifest = Manifest::default();
    let mut sums = HashMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (key, value) = raw.split_once('=').ok_or_else(|| DataError::Manifest {
            line,
            reason: "expected key=value".to_string(),
        })?;
        match key.strip_prefix(CHECKSUM_PREFIX) {
            Some(file) => {
                sums.insert(file.to_string(), value.to_string());
            }
            None => {
                if manifest.get(key).is_some() {
                    return Err(DataError::Manifest {
                        line,
                        reason: format!("duplicate key `{key}`"),
                    });
                }
                manifest.entries.push((key.to_string(), value.to_string()));
            }
        }
    }
    match manifest.get("schema_version") {
        Some(v) if v == SCHEMA_VERSION.to_string() => Ok((manifest, sums)),
        Some(v) => Err(DataError::SchemaVersion {
            found: v.to_string(),
        }),
        None => Err(DataError::Manifest {
            line: 1,
            reason: "missing schema_version".to_string(),
        }),
    }
}

/// Reads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle, DataError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(io_err(&path))
    };
    let manifest_bytes = read(MANIFEST_FILE)?;
    let text = String::from_utf8(manifest_bytes).map_err(|_| DataError::Manifest {
        line: 0,
        reason: "not valid UTF-8".to_string(),
    })?;
    let (manifest, sums) = parse_manifest(&text)?;

    let mut files = Vec::new();
    for name in [DONORS_FILE, PATIENTS_FILE, OFFERS_FILE] {
        let bytes = read(name)?;
        if let Some(expected) = sums.get(name) {
            if *expected != sha_hex(&bytes) {
                return Err(DataError::Checksum {
                    file: name.to_string(),
                });
            }
        }
        files.push(bytes);
    }
    let bundle = DatasetBundle {
        donors: parse_donors(&files[0])?,
        patients: parse_patients(&files[1])?,
        offers: parse_offers(&files[2])?,
        manifest,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::InfoRegime;
    use crate::data_io::{generate_dataset, GeneratorConfig};
    use crate::policies::PriorityPolicy;

    fn bundle() -> DatasetBundle {
        let cfg = GeneratorConfig {
            n_donors: 30,
            n_patients: 200,
            seed: 9,
            ..Default::default()
        };
        generate_dataset(&cfg, PriorityPolicy::Optn, InfoRegime::SocialLearning).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let h1 = manifest_hash(dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, b);
        let dir2 = tempfile::tempdir().unwrap();
        save_bundle(&loaded, dir2.path()).unwrap();
        assert_eq!(manifest_hash(dir2.path()).unwrap(), h1);
        for f in [DONORS_FILE, PATIENTS_FILE, OFFERS_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn empty_offers_with_header() {
        let offers = parse_offers(&offers_csv(&[])).unwrap();
        assert!(offers.is_empty());
        let mut b = bundle();
        b.offers.clear();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        assert!(load_bundle(dir.path()).unwrap().offers.is_empty());
    }

    #[test]
    fn unknown_donor_names_the_line() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let path = dir.path().join(OFFERS_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let rest = lines[3].split_once(',').unwrap().1.to_string();
        lines[3] = format!("77777,{rest}");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        // drop the checksum so the integrity check is what fires
        let mpath = dir.path().join(MANIFEST_FILE);
        let m: String = fs::read_to_string(&mpath)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("sha256.offers"))
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&mpath, m).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(
            matches!(err, DataError::UnknownDonor { line: 4, id: 77777 }),
            "{err}"
        );
        assert!(err.to_string().contains("line 4"));
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&b, dir.path()).unwrap();
        let path = dir.path().join(PATIENTS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(b'\n');
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(DataError::Checksum { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let good = String::from_utf8(offers_csv(&bundle().offers[..2])).unwrap();
        let mut lines: Vec<String> = good.lines().map(String::from).collect();
        let mut fields: Vec<&str> = lines[2].split(',').collect();
        fields[4] = "X";
        lines[2] = fields.join(",");
        let err = parse_offers(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            DataError::Parse { line, column, .. } => {
                assert_eq!(column, "final_decision");
                assert_eq!(line, 3);
            }
            other => panic!("{other}"),
        }
        let missing = "donor_id,patient_id\n1,2\n";
        assert!(matches!(
            parse_offers(missing.as_bytes()),
            Err(DataError::MissingColumn { .. })
        ));
        let bt = String::from_utf8(donors_csv(&bundle().donors[..1])).unwrap();
        let mut lines: Vec<String> = bt.lines().map(String::from).collect();
        let mut fields: Vec<&str> = lines[1].split(',').collect();
        fields[8] = "Q";
        lines[1] = fields.join(",");
        let bt = lines.join("\n");
        assert!(matches!(
            parse_donors(bt.as_bytes()),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn schema_version_is_checked() {
        assert!(matches!(
            parse_manifest("schema_version=2\n"),
            Err(DataError::SchemaVersion { .. })
        ));
        assert!(parse_manifest("seed=1\n").is_err());
        assert!(parse_manifest("schema_version=1\nnot a pair\n").is_err());
    }
}
