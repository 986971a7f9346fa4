use serde::{Deserialize, Serialize};

use super::{DataError, FrameRecord};

/// Evaluation protocol: 1 and 2 split by subject (2 adds Procrustes
/// alignment at evaluation); 3 additionally holds out one camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Protocol {
    One,
    Two,
    Three,
}

impl TryFrom<u8> for Protocol {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Protocol::One),
            2 => Ok(Protocol::Two),
            3 => Ok(Protocol::Three),
            _ => Err(format!("protocol must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Protocol> for u8 {
    fn from(p: Protocol) -> u8 {
        match p {
            Protocol::One => 1,
            Protocol::Two => 2,
            Protocol::Three => 3,
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Held-out subjects. Every other subject is training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectSplit {
    pub test_subjects: Vec<u32>,
}

impl Default for SubjectSplit {
    fn default() -> Self {
        Self {
            test_subjects: vec![9, 11],
        }
    }
}

impl SubjectSplit {
    pub fn is_test(&self, subject: u32) -> bool {
        self.test_subjects.contains(&subject)
    }
}

/// Splits records into `(train, test)`.
///
/// Protocols 1 and 2 partition the input by subject. Protocol 3 also drops
/// `test_camera` from train and every other camera from test, so the two
/// sides partition the camera-filtered input.
pub fn split_protocol(
    records: &[FrameRecord],
    protocol: Protocol,
    subjects: &SubjectSplit,
    test_camera: &str,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>), DataError> {
    if protocol == Protocol::Three && !records.iter().any(|r| r.camera.id == test_camera) {
        return Err(DataError::UnknownCamera(test_camera.to_string()));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in records {
        let on_test_cam = r.camera.id == test_camera;
        if subjects.is_test(r.subject) {
            if protocol != Protocol::Three || on_test_cam {
                test.push(r.clone());
            }
        } else if protocol != Protocol::Three || !on_test_cam {
            train.push(r.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(DataError::EmptySplit);
    }
    Ok((train, test))
}
