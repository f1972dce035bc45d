//! Published footprints of heavyweight chest X-ray classifiers, carried as
//! static data for `footprint --compare`. Values are reported figures, not
//! recomputed; `None` marks a figure that was not published.

use serde::{Deserialize, Serialize};

/// Which comparison group a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    ThreeClass,
    CovidVsPneumonia,
    CovidVsNormal,
}

impl Comparison {
    pub fn label(self) -> &'static str {
        match self {
            Self::ThreeClass => "3-class",
            Self::CovidVsPneumonia => "COVID-19 vs Viral Pneumonia",
            Self::CovidVsNormal => "COVID-19 vs Normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub comparison: Comparison,
    pub model: &'static str,
    pub params: u64,
    pub memory_mb: Option<u32>,
}

const fn row(
    comparison: Comparison,
    model: &'static str,
    params: u64,
    memory_mb: Option<u32>,
) -> ReferenceRow {
    ReferenceRow {
        comparison,
        model,
        params,
        memory_mb,
    }
}

use Comparison::*;

pub const REFERENCE_ROWS: &[ReferenceRow] = &[
    row(ThreeClass, "ResNet 101", 44_654_504, Some(171)),
    row(ThreeClass, "InceptionV3", 24_000_000, Some(92)),
    row(ThreeClass, "Xception", 22_910_480, Some(88)),
    row(ThreeClass, "InstaCOV-Net-19", 54_914_918, None),
    row(ThreeClass, "VGG16", 138_000_000, Some(528)),
    row(ThreeClass, "COVID-Net", 11_750_000, None),
    row(ThreeClass, "ResNet 50", 26_000_000, Some(99)),
    row(ThreeClass, "EfficientNetB0", 5_300_000, Some(29)),
    row(ThreeClass, "VGG19", 143_667_240, Some(549)),
    row(ThreeClass, "MobileNetV2", 3_538_984, Some(14)),
    row(CovidVsPneumonia, "InceptionV3", 24_000_000, Some(92)),
    row(CovidVsPneumonia, "ResNet 50", 26_000_000, Some(98)),
    row(CovidVsPneumonia, "ResNet 101", 44_654_504, Some(171)),
    row(CovidVsPneumonia, "ResNet 152", 60_344_232, Some(232)),
    row(
        CovidVsPneumonia,
        "Inception ResNetV2",
        55_800_000,
        Some(215),
    ),
    row(CovidVsPneumonia, "MobileNetV2", 3_538_984, Some(14)),
    row(CovidVsNormal, "ResNet 34", 21_500_000, None),
    row(CovidVsNormal, "GoogLeNet", 7_000_000, Some(40)),
    row(CovidVsNormal, "AlexNet", 60_000_000, Some(217)),
    row(CovidVsNormal, "VGG16", 138_000_000, Some(528)),
    row(CovidVsNormal, "InceptionV3", 24_000_000, Some(92)),
    row(CovidVsNormal, "ResNet 101", 44_654_504, Some(171)),
    row(CovidVsNormal, "Xception", 22_910_480, Some(88)),
    row(CovidVsNormal, "MobileNetV2", 3_538_984, Some(14)),
];
