use serde_json::{Map, Value};

use super::{PromptVariant, ProtocolError};
use crate::aperture::{ApertureAction, NormalizedBBox, PointPrompt};

pub const ZOOM_TOOL: &str = "image_zoom_in_tool";
pub const SEGMENT_TOOL: &str = "image_segment_tool";

const ZOOM_FIELDS: &[&str] = &["bbox", "obj_label"];
const SEGMENT_FIELDS: &[&str] = &["bbox", "points", "labels", "obj_label"];

/// The JSON document inside a `<tool_call>` block, before schema checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCallPayload {
    pub name: String,
    pub arguments: Map<String, Value>,
}

impl ToolCallPayload {
    /// Strict parse: one JSON object with a string `name` and an object
    /// `arguments`. Trailing characters after the object are rejected.
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let value: Value =
            serde_json::from_str(text.trim()).map_err(|e| ProtocolError::MalformedToolCall(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(ProtocolError::MalformedToolCall("payload is not an object".into()));
        };
        let name = match obj.remove("name") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(ProtocolError::MalformedToolCall("`name` is not a string".into())),
            None => return Err(ProtocolError::MalformedToolCall("missing `name`".into())),
        };
        let arguments = match obj.remove("arguments") {
            Some(Value::Object(m)) => m,
            Some(_) => return Err(ProtocolError::MalformedToolCall("`arguments` is not an object".into())),
            None => return Err(ProtocolError::MalformedToolCall("missing `arguments`".into())),
        };
        for key in obj.keys() {
            log::warn!("ignoring unknown top-level tool call field `{key}`");
        }
        Ok(Self { name, arguments })
    }

    pub fn to_json(&self) -> String {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("arguments".into(), Value::Object(self.arguments.clone()));
        Value::Object(obj).to_string()
    }

    /// Payload for an already-typed action; the inverse of [`validate_tool_call`].
    pub fn from_action(action: &ApertureAction) -> Self {
        let mut args = Map::new();
        args.insert("bbox".into(), serde_json::json!(action.bbox().to_array()));
        if let ApertureAction::Segment { points, .. } = action {
            let pts: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
            let labels: Vec<u8> = points.iter().map(|p| p.label()).collect();
            args.insert("points".into(), serde_json::json!(pts));
            args.insert("labels".into(), serde_json::json!(labels));
        }
        if let Some(label) = action.obj_label() {
            args.insert("obj_label".into(), Value::String(label.to_string()));
        }
        Self { name: action.tool_name().to_string(), arguments: args }
    }
}

/// Checks the payload against the tool schema and the variant's tool set.
pub fn validate_tool_call(payload: &ToolCallPayload, variant: PromptVariant) -> Result<ApertureAction, ProtocolError> {
    let is_zoom = match payload.name.as_str() {
        ZOOM_TOOL => true,
        SEGMENT_TOOL => false,
        other => return Err(ProtocolError::UnknownTool(other.to_string())),
    };
    if (is_zoom && !variant.allows_zoom()) || (!is_zoom && !variant.allows_segment()) {
        return Err(ProtocolError::VariantViolation { tool: payload.name.clone(), variant });
    }
    let args = &payload.arguments;
    let known = if is_zoom { ZOOM_FIELDS } else { SEGMENT_FIELDS };
    for key in args.keys().filter(|k| !known.contains(&k.as_str())) {
        log::warn!("ignoring unknown argument `{key}` for {}", payload.name);
    }

    let bbox = parse_bbox(args.get("bbox"))?;
    let obj_label = match args.get("obj_label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("`obj_label` must be a string")),
    };
    if is_zoom {
        return Ok(ApertureAction::Zoom { bbox, obj_label });
    }

    let points = match args.get("points") {
        Some(Value::Array(items)) => items.iter().map(parse_pair).collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema("`points` must be an array")),
        None => return Err(schema("missing required `points`")),
    };
    let labels = match args.get("labels") {
        Some(Value::Array(items)) => items.iter().map(parse_label).collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema("`labels` must be an array")),
        None => return Err(schema("missing required `labels`")),
    };
    if points.is_empty() {
        return Err(schema("`points` must be non-empty"));
    }
    if points.len() != labels.len() {
        return Err(schema("`points` and `labels` differ in length"));
    }
    let prompts = points
        .iter()
        .zip(&labels)
        .map(|(p, l)| PointPrompt::new(p[0], p[1], *l).map_err(|e| schema(&e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    ApertureAction::segment(bbox, prompts, obj_label).map_err(|e| schema(&e.to_string()))
}

fn schema(msg: &str) -> ProtocolError {
    ProtocolError::SchemaViolation(msg.to_string())
}

fn number(v: &Value) -> Result<f64, ProtocolError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| schema(&format!("expected a number, got {v}")))
}

fn parse_bbox(v: Option<&Value>) -> Result<NormalizedBBox, ProtocolError> {
    let Some(v) = v else {
        return Err(schema("missing required `bbox`"));
    };
    let Value::Array(items) = v else {
        return Err(schema("`bbox` must be an array"));
    };
    if items.len() != 4 {
        return Err(schema(&format!("`bbox` needs 4 numbers, got {}", items.len())));
    }
    let c = items.iter().map(number).collect::<Result<Vec<_>, _>>()?;
    NormalizedBBox::clamped(c[0], c[1], c[2], c[3]).map_err(|e| schema(&e.to_string()))
}

fn parse_pair(v: &Value) -> Result<[f64; 2], ProtocolError> {
    match v {
        Value::Array(xy) if xy.len() == 2 => Ok([number(&xy[0])?, number(&xy[1])?]),
        _ => Err(schema(&format!("point must be [x, y], got {v}"))),
    }
}

fn parse_label(v: &Value) -> Result<i64, ProtocolError> {
    let label = match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        _ => None,
    };
    match label {
        Some(l @ (0 | 1)) => Ok(l),
        _ => Err(schema(&format!("label must be 0 or 1, got {v}"))),
    }
}
