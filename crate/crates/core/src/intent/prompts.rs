use super::rules::{rule_lookup, ComponentLabel, TamperMethod};
use super::RefinedRegion;
use crate::error::{Error, Result};

/// Heading that precedes the refined-region JSON inside the intent prompt.
pub const REGION_INPUT_LABEL: &str = "Textual Prompt of Tampered Region:";

const REFINEMENT_PRINCIPLES: &str = "\
- Area Analysis: Prioritize highlighting sufficiently large areas and filter out minor areas along the background or edges that are likely noise. When you find a very small highlighted area on a relatively large color block, shape, or text, it is highly likely to be noise.

- Shape Analysis: For highlighted visual elements, focus on regular shapes (e.g., rectangles or circles) to detect potential tampering and disregard irregular shapes that suggest noise.

- Edge Analysis: Except for text modifications, the highlighted tampered areas should have smooth edges and fully cover the manipulated regions.
";

const REFINEMENT_SCHEMA: &str = "\
```json
{
  \"tampered_regions\": [
    {
      \"tampered_region\": \"<tampered region>\",
      \"tampered_component\": [\"<tampered component 1>\", \"<tampered component 2>\", ...],
      \"reason\": \"reason for tampered region\"
    },
    ...
  ]
}
```
";

const INTENT_SCHEMA: &str = "\
```json
{ \"tampering_intents\": [
    {
      \"tampered_region\": \"<tampered region>\",
      \"method\": \"<Tampering Method>\",
      \"tamper\": \"<Tampering Process>\",
      \"intent\": \"<Tampering Intent>\"
    },...]}
```
";

fn method_definition(m: TamperMethod) -> &'static str {
    match m {
        TamperMethod::Mdv => "Changing the quantitative value of an existing data point, which alters its visual representation (e.g., making a bar taller/shorter, moving a point up/down, changing the height of a line segment, or altering the boundary of an area). Crucially, in this method, the visual element is consistently updated to accurately reflect the new (modified) data point value. The visual element representing the data point remains present on the chart, but its specific value has been changed.",
        TamperMethod::Ard => "Introducing entirely new data points (and their corresponding visual elements) or completely deleting existing data points (and their corresponding visual elements). This results in visual elements appearing or disappearing from the chart, rather than just changing their existing properties.",
        TamperMethod::Mcv => "Changing the values or textual labels of x-axis or y-axis to alter their position in the chart.",
        TamperMethod::Daa => "Using misleading annotations (e.g., clustering boxes, guide lines, arrows) to create a false impression.",
        TamperMethod::Ml => "Changing the legend\u{2019}s content, colors, or order to mislead viewers about what the data represents.",
        TamperMethod::Hl => "Removing data labels near data points (e.g., scatter, point, etc.) to obscure the true meaning of the data.",
        TamperMethod::Arl => "Inserting or deleting logos to mislead viewers about the data source.",
        TamperMethod::Dvd => "Making the visual representation of data inconsistent with the actual values. This occurs when the visual element (e.g., bar length, area size) does not accurately correspond to its stated numerical value, or when one is modified without the other being consistently updated, creating a mismatch.",
        TamperMethod::Mc => "Adjusting the color mapping (including legend, data points, and their background colors) to distort the perception of data distribution, or introducing inconsistent colors to mislead.",
        TamperMethod::Others => "Any other tampering method that is not included in the above types.",
    }
}

/// Order in which the mapping rules are listed.
const RULE_ORDER: [ComponentLabel; 7] = [
    ComponentLabel::Region,
    ComponentLabel::DataLabels,
    ComponentLabel::Axis,
    ComponentLabel::Legend,
    ComponentLabel::Annotation,
    ComponentLabel::Logo,
    ComponentLabel::Colormap,
];

fn join_methods(ms: &[TamperMethod]) -> String {
    ms.iter().map(|m| m.display_name()).collect::<Vec<_>>().join(", ")
}

fn mapping_rules_text() -> String {
    let mut s = String::from(
        "For a given tampering_component, you must evaluate the Primary Methods first. \
         Only if none of the primary methods accurately describe the manipulation should you consider the Secondary Methods.\n\n",
    );
    for c in RULE_ORDER {
        let r = rule_lookup(c);
        s.push_str(&format!("- If tampering_component is \"{}\":\n", c.name()));
        if r.secondary_methods.is_empty() {
            s.push_str(&format!("    - Primary Method: {}\n", join_methods(&r.primary_methods)));
        } else {
            s.push_str(&format!("    - Primary Methods: {}\n", join_methods(&r.primary_methods)));
            s.push_str(&format!("    - Secondary Methods: {}\n", join_methods(&r.secondary_methods)));
        }
    }
    s
}

/// First-agent prompt. `image_ref` names the overlay image sent alongside.
pub fn build_refinement_prompt(image_ref: &str) -> String {
    let components: String = ComponentLabel::ALL
        .iter()
        .map(|c| format!("    - {}\n", c.name()))
        .collect();
    format!(
        "## Task Context\n\n\
         You are an expert in computer vision. Given a tampered chart image, and we have detected the tampered areas and marked them with green lines.\n\
         You should provide the refined tampered regions and components as output, considering the principles provided.\n\
         The components to consider are:\n\
         {components}\n\
         ## Data Input\n\n\
         Tampered Visualization Image with Visual Prompt: {image_ref}\n\n\
         ## Chain-of-Thought\n\n\
         Your reasoning should retain only confirmed information. Here is a potential checklist for inferring the tampering area:\n\
         1. Analyze the overall information conveyed by the visualization.\n\
         2. Identify the areas surrounded by green lines, which indicate potential tampering regions.\n\
         3. Filter out noise from the highlighted areas and determine where meaningful tampering has actually occurred.\n\
         4. Determine the tampering regions and corresponding components.\n\n\
         ## Principles\n\n\
         To filter out noise, you may refer to the three principles:\n\n\
         {REFINEMENT_PRINCIPLES}\n\
         ## Output Format\n\n\
         Return the output in this strict format:\n\
         {REFINEMENT_SCHEMA}"
    )
}

/// Second-agent prompt, embedding the refined regions as JSON.
pub fn build_intent_prompt(image_ref: &str, refined: &[RefinedRegion]) -> Result<String> {
    if refined.is_empty() {
        return Err(Error::arg("intent prompt needs at least one refined region"));
    }
    let regions = serde_json::to_string_pretty(&serde_json::json!({ "tampered_regions": refined }))
        .expect("refined regions serialize");
    let glossary: String = TamperMethod::ALL
        .iter()
        .map(|m| format!("- {}: {}\n", m.display_name(), method_definition(*m)))
        .collect();
    Ok(format!(
        "## Task Context\n\n\
         You are an expert in visual analytics. Given the refined tampered regions identified from a tampered visualization image, you need to interpret and analyze the tampering intent behind these regions.\n\
         You should provide a detailed analysis of the tampering intent, including the types of manipulations and their potential misleading effects.\n\n\
         ## Data Input\n\n\
         Tampered Visualization Image with Visual Prompt: {image_ref}\n\
         {REGION_INPUT_LABEL}\n\
         ```json\n{regions}\n```\n\n\
         ## Component-to-Method Mapping Rules\n\n\
         {rules}\n\
         ## Chain-of-Thought\n\n\
         Let\u{2019}s think step by step about the tampering intent. Here is a potential checklist for inferring the tampering intent:\n\n\
         1. Understand the context and a full understanding of the input\n\
         2. For each tampered region, first identify its tampering_component from the input. Then, using the Component-to-Method Mapping Rules above, select the most fitting method. Remember to check Primary Methods before Secondary ones.\n\
         3. Based on your analysis, provide a simple description of the tampering process (tamper) in one sentence \u{2014} how the original image was tampered to become the current version. \
         For example: \"Increase the population value of England from 53 million to 60 million and decrease the population value of Scotland from 5.2 million to 4 million.\", \"Remove the data points for feeling hopeful about the future\"\n\
         4. Infer the intent based on the primary message conveyed by the chart and the identified tampered areas.\n\n\
         ## Principles\n\n\
         To infer the tampering intents, you may refer to these common tampering types:\n\
         {glossary}\n\
         ## Output Format\n\n\
         Return in JSON format with the following structure:\n\
         {INTENT_SCHEMA}",
        rules = mapping_rules_text(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> RefinedRegion {
        RefinedRegion {
            tampered_region: "top-left bar".into(),
            tampered_component: vec![ComponentLabel::Region],
            reason: "solid rectangle".into(),
        }
    }

    #[test]
    fn refinement_prompt_contents() {
        let p = build_refinement_prompt("overlay.png");
        assert!(p.contains("marked them with green lines"));
        assert!(p.contains("overlay.png"));
        for c in ComponentLabel::ALL {
            assert!(p.contains(&format!("- {}\n", c.name())));
        }
        for principle in ["Area Analysis", "Shape Analysis", "Edge Analysis"] {
            assert!(p.contains(principle));
        }
        assert!(p.ends_with(REFINEMENT_SCHEMA));
    }

    #[test]
    fn intent_prompt_contents() {
        let p = build_intent_prompt("img", &[region()]).unwrap();
        assert!(p.contains("\"tampered_region\": \"top-left bar\""));
        for m in TamperMethod::ALL {
            assert!(p.contains(&format!("- {}: ", m.display_name())));
        }
        assert!(p.contains("- If tampering_component is \"region\":\n    - Primary Methods: Modifying data point values, Adding or removing data points, Data-visual disproportion\n    - Secondary Methods: Modifying the colormap\n"));
        assert!(p.contains("- If tampering_component is \"legend\":\n    - Primary Method: Modifying the legend\n"));
        assert!(p.ends_with(INTENT_SCHEMA));
        assert_eq!(p, build_intent_prompt("img", &[region()]).unwrap());
    }

    #[test]
    fn intent_prompt_requires_regions() {
        assert!(matches!(build_intent_prompt("img", &[]), Err(Error::Argument(_))));
    }
}
