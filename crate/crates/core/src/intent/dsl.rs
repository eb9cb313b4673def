//! Deterministic parser for the intent command language.
//!
//! The full grammar lives in `docs/intent-dsl.md`. Keywords are
//! case-insensitive; identifiers are `[a-z0-9_]+`.

use std::str::FromStr;

use super::{EntityRef, IntentClass, IntentRepresentation, ObservationDescriptor, ParamValue, Params};
use crate::adapters::perception;
use crate::data::FormatId;
use crate::state::SpatialPredicate;

pub const GRAMMAR_HINT: &str = "expected one of: \
CREATE scene [WITH <item>,...] [SET <path>=<value>,...] [FROM observation]; \
EDIT scene [WITH ...] [SET ...] [REMOVE [entity|camera|relation] <ref>,...] [PRESERVE all [EXCEPT <scope>,...] | PRESERVE <scope>,...]; \
EDIT model <model> CODE <name>,...; \
COLLECT <n> [episodes] OF [task] <task> [EXPORT <format>,...] [STABILITY <x>]; \
CONVERT [dataset] <task> TO <format>,...; \
TRAIN <model> ON [dataset] <task> [EPOCHS <n>] [TARGET <x>] [BUDGET <x>]; \
EVALUATE <model>,... ON [benchmark] <id> [EPISODES <n>] [BUDGET <x>]; \
INGEST <category> [FROM catalog]. \
Items: <id> | <id> [NOT] ON|IN|NEAR|LEFT_OF|RIGHT_OF <id> | <key>=<value>. \
Identifiers are lowercase [a-z0-9_]+.";

const CLAUSE_KEYWORDS: &[&str] = &[
    "WITH", "SET", "REMOVE", "PRESERVE", "FROM", "OF", "EXPORT", "TO", "EPOCHS", "TARGET", "BUDGET", "EPISODES",
    "STABILITY", "EXCEPT", "CODE",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Comma,
    Eq,
    Colon,
}

fn lex(text: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Tok>| {
        if !word.is_empty() {
            out.push(Tok::Word(std::mem::take(word)));
        }
    };
    for c in text.chars() {
        match c {
            ',' | '=' | ':' => {
                flush(&mut word, &mut out);
                out.push(match c {
                    ',' => Tok::Comma,
                    '=' => Tok::Eq,
                    _ => Tok::Colon,
                });
            }
            c if c.is_whitespace() => flush(&mut word, &mut out),
            c if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '+') => word.push(c),
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    flush(&mut word, &mut out);
    Ok(out)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_word(&self) -> Option<&str> {
        match self.peek() {
            Some(Tok::Word(w)) => Some(w),
            _ => None,
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek_word().is_some_and(|w| w.eq_ignore_ascii_case(kw))
    }

    fn at_clause(&self) -> bool {
        self.peek_word().is_some_and(|w| CLAUSE_KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), String> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(format!("expected {kw} {}", self.where_()))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn where_(&self) -> String {
        match self.peek() {
            Some(Tok::Word(w)) => format!("at {w:?}"),
            Some(Tok::Comma) => "at ','".into(),
            Some(Tok::Eq) => "at '='".into(),
            Some(Tok::Colon) => "at ':'".into(),
            None => "at end of input".into(),
        }
    }

    fn word(&mut self, what: &str) -> Result<String, String> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(format!("expected {what} {}", self.where_())),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, String> {
        if self.at_clause() {
            return Err(format!("expected {what} {}", self.where_()));
        }
        let w = self.word(what)?;
        if !is_ident(&w) {
            return Err(format!("invalid identifier {w:?} for {what}: identifiers are [a-z0-9_]+"));
        }
        Ok(w)
    }

    fn number(&mut self, what: &str) -> Result<f64, String> {
        let w = self.word(what)?;
        match w.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected number for {what}, found {w:?}")),
        }
    }

    fn count(&mut self, what: &str) -> Result<i64, String> {
        let w = self.word(what)?;
        w.parse::<i64>()
            .ok()
            .filter(|n| *n >= 0)
            .ok_or_else(|| format!("expected non-negative integer for {what}, found {w:?}"))
    }

    fn formats(&mut self) -> Result<Vec<ParamValue>, String> {
        let mut out = Vec::new();
        loop {
            let w = self.word("format id")?;
            let lower = w.to_ascii_lowercase();
            FormatId::from_str(&lower).map_err(|_| {
                format!(
                    "unsupported format {w:?}; expected one of {}",
                    FormatId::ALL.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
                )
            })?;
            push_unique(&mut out, ParamValue::Str(lower));
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn ident_list(&mut self, what: &str) -> Result<Vec<ParamValue>, String> {
        let mut out = Vec::new();
        loop {
            push_unique(&mut out, ParamValue::Str(self.ident(what)?));
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

fn push_unique(list: &mut Vec<ParamValue>, v: ParamValue) {
    if !list.contains(&v) {
        list.push(v);
    }
}

fn relation_keyword(w: &str) -> Option<SpatialPredicate> {
    SpatialPredicate::parse(w)
}

fn mention(s: &str) -> ParamValue {
    ParamValue::Entity(EntityRef::category(s))
}

fn relation_value(s: &str, p: SpatialPredicate, o: &str) -> ParamValue {
    ParamValue::List(vec![mention(s), ParamValue::Str(p.as_str().into()), mention(o)])
}

/// Scene-edit parameters accumulated across clauses.
#[derive(Default)]
struct SceneParams {
    entities: Vec<ParamValue>,
    relations: Vec<ParamValue>,
    forbidden: Vec<ParamValue>,
    remove_entities: Vec<ParamValue>,
    remove_cameras: Vec<ParamValue>,
    scalars: Params,
    preserve_all: bool,
    preserve: Vec<ParamValue>,
    preserve_seen: bool,
    observation: bool,
}

impl SceneParams {
    fn into_params(self) -> Params {
        let mut p = self.scalars;
        let lists = [
            ("entities", self.entities),
            ("relations", self.relations),
            ("forbidden_relations", self.forbidden),
            ("remove_entities", self.remove_entities),
            ("remove_cameras", self.remove_cameras),
        ];
        for (k, v) in lists {
            if !v.is_empty() {
                p.insert(k.into(), ParamValue::List(v));
            }
        }
        if self.preserve_seen {
            p.insert("preserve_all".into(), ParamValue::Bool(self.preserve_all));
            p.insert("preserve".into(), ParamValue::List(self.preserve));
        }
        if self.observation {
            p.insert("observation".into(), ParamValue::Bool(true));
        }
        p
    }

    fn assign(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = || value.parse::<f64>().ok().filter(|v| v.is_finite());
        let path: Vec<&str> = key.split('.').collect();
        match path.as_slice() {
            ["robot"] => {
                if !is_ident(value) {
                    return Err(format!("invalid robot model {value:?}"));
                }
                self.scalars.insert("robot".into(), ParamValue::Str(value.into()));
            }
            ["lighting"] | ["lighting", "intensity"] => {
                let v = num().ok_or_else(|| format!("lighting intensity must be a number, found {value:?}"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("lighting intensity {v} outside [0, 1]"));
                }
                self.scalars.insert("lighting.intensity".into(), ParamValue::num(v));
            }
            ["lighting", "color_temperature"] => {
                let v = num().ok_or_else(|| format!("color temperature must be a number, found {value:?}"))?;
                if v <= 0.0 {
                    return Err(format!("color temperature {v} must be positive"));
                }
                self.scalars.insert("lighting.color_temperature".into(), ParamValue::num(v));
            }
            ["cameras"] => {
                let n = value.parse::<i64>().ok().filter(|n| *n >= 0).ok_or_else(|| format!("camera count must be a non-negative integer, found {value:?}"))?;
                self.scalars.insert("camera_count".into(), ParamValue::Int(n));
            }
            ["camera", id, "fov"] if is_ident(id) => {
                let v = num().ok_or_else(|| format!("camera fov must be a number, found {value:?}"))?;
                if !(v > 0.0 && v < 180.0) {
                    return Err(format!("camera fov {v} outside (0, 180)"));
                }
                self.scalars.insert(format!("camera.{id}.fov"), ParamValue::num(v));
            }
            _ => return Err(format!("unknown setting {key:?}")),
        }
        Ok(())
    }

    fn item(&mut self, p: &mut Parser) -> Result<(), String> {
        let head = p.word("entity or setting")?;
        if p.eat(&Tok::Eq) {
            let value = p.word("value")?;
            return self.assign(&head.to_ascii_lowercase(), &value);
        }
        if !is_ident(&head) {
            return Err(format!("invalid identifier {head:?}: identifiers are [a-z0-9_]+"));
        }
        let negated = p.eat_keyword("NOT");
        let rel = p.peek_word().and_then(relation_keyword);
        match rel {
            Some(pred) => {
                p.pos += 1;
                let object = p.ident("relation object")?;
                if negated {
                    push_unique(&mut self.forbidden, relation_value(&head, pred, &object));
                } else {
                    push_unique(&mut self.entities, mention(&head));
                    push_unique(&mut self.entities, mention(&object));
                    push_unique(&mut self.relations, relation_value(&head, pred, &object));
                }
            }
            None if negated => return Err(format!("expected relation after NOT {}", p.where_())),
            None => push_unique(&mut self.entities, mention(&head)),
        }
        Ok(())
    }

    fn removal(&mut self, p: &mut Parser) -> Result<(), String> {
        if p.eat_keyword("camera") {
            push_unique(&mut self.remove_cameras, ParamValue::Str(p.ident("camera id")?));
        } else if p.eat_keyword("relation") {
            let s = p.ident("relation subject")?;
            let pred = p
                .peek_word()
                .and_then(relation_keyword)
                .ok_or_else(|| format!("expected relation {}", p.where_()))?;
            p.pos += 1;
            let o = p.ident("relation object")?;
            push_unique(&mut self.forbidden, relation_value(&s, pred, &o));
        } else {
            p.eat_keyword("entity");
            push_unique(&mut self.remove_entities, mention(&p.ident("entity")?));
        }
        Ok(())
    }

    fn scope_item(&mut self, p: &mut Parser) -> Result<ParamValue, String> {
        if p.eat_keyword("camera") {
            return Ok(ParamValue::Str(format!("camera:{}", p.ident("camera id")?)));
        }
        let w = p.ident("scope item")?;
        Ok(match w.as_str() {
            "lighting" | "robot" | "cameras" | "relations" => ParamValue::Str(w),
            _ => mention(&w),
        })
    }

    fn preserve(&mut self, p: &mut Parser) -> Result<(), String> {
        if self.preserve_seen {
            return Err("PRESERVE given twice".into());
        }
        self.preserve_seen = true;
        if p.eat_keyword("all") {
            self.preserve_all = true;
            if !p.eat_keyword("EXCEPT") {
                return Ok(());
            }
        }
        loop {
            let item = self.scope_item(p)?;
            push_unique(&mut self.preserve, item);
            if !p.eat(&Tok::Comma) {
                return Ok(());
            }
        }
    }

    fn clauses(&mut self, p: &mut Parser, edit: bool, observation: Option<&ObservationDescriptor>) -> Result<(), String> {
        while !p.done() {
            if p.eat_keyword("WITH") {
                loop {
                    self.item(p)?;
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
            } else if p.eat_keyword("SET") {
                loop {
                    let key = p.word("setting path")?;
                    if !p.eat(&Tok::Eq) {
                        return Err(format!("expected '=' {}", p.where_()));
                    }
                    let value = p.word("value")?;
                    self.assign(&key.to_ascii_lowercase(), &value)?;
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
            } else if edit && p.eat_keyword("REMOVE") {
                loop {
                    self.removal(p)?;
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
            } else if edit && p.eat_keyword("PRESERVE") {
                self.preserve(p)?;
            } else if p.eat_keyword("FROM") {
                p.expect_keyword("observation")?;
                let obs = observation.ok_or("FROM observation requires an observation descriptor")?;
                self.observation = true;
                let recognized = perception::recognize_objects(obs);
                for cat in &recognized {
                    push_unique(&mut self.entities, mention(cat));
                }
                for (s, pred, o) in perception::localize_objects(obs) {
                    push_unique(&mut self.relations, relation_value(&s, pred, &o));
                }
            } else {
                return Err(format!("unexpected token {}", p.where_()));
            }
        }
        Ok(())
    }
}

/// Parses one DSL command into an ungrounded intent. Mentions are carried
/// as category references until grounding resolves them.
pub fn parse_command(text: &str, observation: Option<&ObservationDescriptor>) -> Result<IntentRepresentation, String> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err("empty command".into());
    }
    let mut p = Parser { toks, pos: 0 };
    let verb = p.word("verb")?.to_ascii_uppercase();
    let intent = match verb.as_str() {
        "CREATE" => {
            p.expect_keyword("scene")?;
            p.eat(&Tok::Colon);
            let mut sp = SceneParams::default();
            sp.clauses(&mut p, false, observation)?;
            let mut it = IntentRepresentation::new(IntentClass::CreateScene);
            it.parameters = sp.into_params();
            it
        }
        "EDIT" => {
            if p.eat_keyword("model") {
                let model = p.ident("model id")?;
                p.eat(&Tok::Colon);
                p.expect_keyword("CODE")?;
                let names = p.ident_list("code asset name")?;
                let mut it = IntentRepresentation::new(IntentClass::EditModelCode);
                it.parameters.insert("model".into(), ParamValue::Str(model));
                it.parameters.insert("code_assets".into(), ParamValue::List(names));
                it
            } else {
                p.expect_keyword("scene")?;
                p.eat(&Tok::Colon);
                let mut sp = SceneParams::default();
                sp.clauses(&mut p, true, observation)?;
                let mut it = IntentRepresentation::new(IntentClass::EditScene);
                it.parameters = sp.into_params();
                it
            }
        }
        "COLLECT" => {
            let n = p.count("episode count")?;
            if n == 0 {
                return Err("episode count must be positive".into());
            }
            p.eat_keyword("episodes");
            p.eat_keyword("episode");
            p.expect_keyword("OF")?;
            p.eat_keyword("task");
            let task = p.ident("task id")?;
            let mut it = IntentRepresentation::new(IntentClass::CollectTrajectories);
            it.parameters.insert("episodes".into(), ParamValue::Int(n));
            it.parameters.insert("task".into(), ParamValue::Str(task));
            while !p.done() {
                if p.eat_keyword("EXPORT") {
                    let f = p.formats()?;
                    it.parameters.insert("formats".into(), ParamValue::List(f));
                } else if p.eat_keyword("STABILITY") {
                    let x = p.number("stability threshold")?;
                    if x < 0.0 {
                        return Err("stability threshold must be non-negative".into());
                    }
                    it.parameters.insert("stability".into(), ParamValue::num(x));
                } else {
                    return Err(format!("unexpected token {}", p.where_()));
                }
            }
            it
        }
        "CONVERT" => {
            p.eat_keyword("dataset");
            let dataset = p.ident("dataset id")?;
            p.expect_keyword("TO")?;
            let f = p.formats()?;
            let mut it = IntentRepresentation::new(IntentClass::TransformData);
            it.parameters.insert("dataset".into(), ParamValue::Str(dataset));
            it.parameters.insert("formats".into(), ParamValue::List(f));
            it
        }
        "TRAIN" => {
            let model = p.ident("model id")?;
            p.expect_keyword("ON")?;
            p.eat_keyword("dataset");
            let dataset = p.ident("dataset id")?;
            let mut it = IntentRepresentation::new(IntentClass::TrainModel);
            it.parameters.insert("model".into(), ParamValue::Str(model));
            it.parameters.insert("dataset".into(), ParamValue::Str(dataset));
            while !p.done() {
                if p.eat_keyword("EPOCHS") {
                    let n = p.count("epochs")?;
                    if n == 0 {
                        return Err("epochs must be positive".into());
                    }
                    it.parameters.insert("epochs".into(), ParamValue::Int(n));
                } else if p.eat_keyword("TARGET") {
                    let x = p.number("target metric")?;
                    if x <= 0.0 {
                        return Err("target metric must be positive".into());
                    }
                    it.parameters.insert("target".into(), ParamValue::num(x));
                } else if p.eat_keyword("BUDGET") {
                    it.parameters.insert("budget".into(), ParamValue::num(budget(&mut p)?));
                } else {
                    return Err(format!("unexpected token {}", p.where_()));
                }
            }
            it
        }
        "EVALUATE" => {
            let models = p.ident_list("model id")?;
            p.expect_keyword("ON")?;
            p.eat_keyword("benchmark");
            let bench = p.ident("benchmark id")?;
            let mut it = IntentRepresentation::new(IntentClass::EvaluateModel);
            it.parameters.insert("models".into(), ParamValue::List(models));
            it.parameters.insert("benchmark".into(), ParamValue::Str(bench));
            while !p.done() {
                if p.eat_keyword("EPISODES") {
                    let n = p.count("evaluation episodes")?;
                    if n == 0 {
                        return Err("evaluation episodes must be positive".into());
                    }
                    it.parameters.insert("episodes".into(), ParamValue::Int(n));
                } else if p.eat_keyword("BUDGET") {
                    it.parameters.insert("budget".into(), ParamValue::num(budget(&mut p)?));
                } else {
                    return Err(format!("unexpected token {}", p.where_()));
                }
            }
            it
        }
        "INGEST" => {
            let category = p.ident("asset category")?;
            if p.eat_keyword("FROM") {
                p.expect_keyword("catalog")?;
            }
            let mut it = IntentRepresentation::new(IntentClass::IngestAsset);
            it.parameters.insert("category".into(), ParamValue::Str(category));
            it
        }
        other => return Err(format!("unknown verb {other:?}")),
    };
    if !p.done() {
        return Err(format!("trailing input {}", p.where_()));
    }
    Ok(intent)
}

fn budget(p: &mut Parser) -> Result<f64, String> {
    let x = p.number("resource budget")?;
    if x <= 0.0 {
        return Err("resource budget must be positive".into());
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexer_splits_punctuation() {
        let toks = lex("WITH a,b=c: d").unwrap();
        assert_eq!(toks.len(), 8);
        assert!(lex("WITH a;b").is_err());
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let a = parse_command("create scene with mug on table", None).unwrap();
        let b = parse_command("CREATE Scene WITH mug ON table", None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identifiers_must_be_lowercase() {
        let err = parse_command("CREATE scene WITH Mug", None).unwrap_err();
        assert!(err.contains("identifier"), "{err}");
    }

    #[test]
    fn relation_implies_both_endpoints() {
        let it = parse_command("CREATE scene WITH mug ON table", None).unwrap();
        assert_eq!(it.param("entities").unwrap().as_list().unwrap().len(), 2);
    }

    #[test]
    fn rejects_trailing_and_unknown() {
        assert!(parse_command("FLY away", None).is_err());
        assert!(parse_command("INGEST drill FROM nowhere", None).is_err());
        assert!(parse_command("COLLECT 0 episodes OF task pick_mug", None).is_err());
        assert!(parse_command("CONVERT pick_mug TO parquet", None).is_err());
    }
}
