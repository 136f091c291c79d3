use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Chart component a tampered region belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentLabel {
    Axis,
    DataLabels,
    Legend,
    Colormap,
    Region,
    Logo,
    Annotation,
}

impl ComponentLabel {
    pub const ALL: [ComponentLabel; 7] = [
        ComponentLabel::Axis,
        ComponentLabel::DataLabels,
        ComponentLabel::Legend,
        ComponentLabel::Colormap,
        ComponentLabel::Region,
        ComponentLabel::Logo,
        ComponentLabel::Annotation,
    ];

    /// Name used in prompts and JSON.
    pub fn name(self) -> &'static str {
        match self {
            ComponentLabel::Axis => "axis",
            ComponentLabel::DataLabels => "data labels",
            ComponentLabel::Legend => "legend",
            ComponentLabel::Colormap => "colormap",
            ComponentLabel::Region => "region",
            ComponentLabel::Logo => "logo",
            ComponentLabel::Annotation => "annotation",
        }
    }

    /// Case-insensitive match on [`Self::name`].
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ComponentLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ComponentLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown component `{s}`")))
    }
}

/// Tampering method taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TamperMethod {
    Mdv,
    Ard,
    Mcv,
    Daa,
    Ml,
    Hl,
    Arl,
    Dvd,
    Mc,
    Others,
}

impl TamperMethod {
    pub const ALL: [TamperMethod; 10] = [
        TamperMethod::Mdv,
        TamperMethod::Ard,
        TamperMethod::Mcv,
        TamperMethod::Daa,
        TamperMethod::Ml,
        TamperMethod::Hl,
        TamperMethod::Arl,
        TamperMethod::Dvd,
        TamperMethod::Mc,
        TamperMethod::Others,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            TamperMethod::Mdv => "MDV",
            TamperMethod::Ard => "ARD",
            TamperMethod::Mcv => "MCV",
            TamperMethod::Daa => "DAA",
            TamperMethod::Ml => "ML",
            TamperMethod::Hl => "HL",
            TamperMethod::Arl => "ARL",
            TamperMethod::Dvd => "DVD",
            TamperMethod::Mc => "MC",
            TamperMethod::Others => "Others",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TamperMethod::Mdv => "Modifying data point values",
            TamperMethod::Ard => "Adding or removing data points",
            TamperMethod::Mcv => "Modifying coordinate values",
            TamperMethod::Daa => "Deceptive auxiliary annotations",
            TamperMethod::Ml => "Modifying the legend",
            TamperMethod::Hl => "Hiding labels",
            TamperMethod::Arl => "Adding or removing logos",
            TamperMethod::Dvd => "Data-visual disproportion",
            TamperMethod::Mc => "Modifying the colormap",
            TamperMethod::Others => "Others",
        }
    }

    /// Accepts the display name or the abbreviation, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|m| m.display_name().eq_ignore_ascii_case(s) || m.abbreviation().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for TamperMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl Serialize for TamperMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.display_name())
    }
}

impl<'de> Deserialize<'de> for TamperMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown method `{s}`")))
    }
}

/// Methods admissible for one component, primary ones to be tried first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRule {
    pub component: ComponentLabel,
    pub primary_methods: Vec<TamperMethod>,
    pub secondary_methods: Vec<TamperMethod>,
}

impl MappingRule {
    pub fn allows(&self, method: TamperMethod) -> bool {
        self.primary_methods.contains(&method) || self.secondary_methods.contains(&method)
    }
}

pub fn rule_lookup(component: ComponentLabel) -> MappingRule {
    use ComponentLabel as C;
    use TamperMethod as M;
    let (primary, secondary): (&[M], &[M]) = match component {
        C::Region => (&[M::Mdv, M::Ard, M::Dvd], &[M::Mc]),
        C::DataLabels => (&[M::Mdv, M::Hl], &[M::Ard, M::Dvd]),
        C::Axis => (&[M::Mcv], &[M::Hl]),
        C::Legend => (&[M::Ml], &[]),
        C::Annotation => (&[M::Daa], &[]),
        C::Logo => (&[M::Arl], &[]),
        C::Colormap => (&[M::Mc], &[]),
    };
    MappingRule {
        component,
        primary_methods: primary.to_vec(),
        secondary_methods: secondary.to_vec(),
    }
}

/// The component whose primary methods list `method` first-most, used to
/// label ground truth. `Others` has no home component.
pub fn home_component(method: TamperMethod) -> Option<ComponentLabel> {
    use ComponentLabel as C;
    use TamperMethod as M;
    Some(match method {
        M::Mdv | M::Ard | M::Dvd => C::Region,
        M::Hl => C::DataLabels,
        M::Mcv => C::Axis,
        M::Ml => C::Legend,
        M::Daa => C::Annotation,
        M::Arl => C::Logo,
        M::Mc => C::Colormap,
        M::Others => return None,
    })
}
