//! Action space, object catalog, and the instruction token vocabulary.
//!
//! Ids are stable: action ids index the embedding table and the action
//! head; object class ids index the object head. Everything here is const
//! or deterministically derived, so datasets remain valid across builds.

use std::collections::BTreeMap;

use thiserror::Error;

pub const NUM_MOTOR_ACTIONS: usize = 12;
pub const STOP_ACTION: usize = 12;
pub const PAD_ACTION: usize = 13;
pub const NUM_ACTIONS: usize = 14;

/// 84 object classes plus NoObject at id 0.
pub const NUM_OBJECT_CLASSES: usize = 85;
pub const NO_OBJECT: usize = 0;

pub const ACTION_NAMES: [&str; NUM_ACTIONS] = [
    "MoveAhead",
    "RotateLeft",
    "RotateRight",
    "LookUp",
    "LookDown",
    "Pickup",
    "Put",
    "Open",
    "Close",
    "ToggleOn",
    "ToggleOff",
    "Slice",
    "<<stop>>",
    "<<pad>>",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectClass {
    pub name: &'static str,
    pub pickupable: bool,
    pub openable: bool,
    pub toggleable: bool,
    pub sliceable: bool,
}

const fn obj(name: &'static str, pickupable: bool, openable: bool, toggleable: bool, sliceable: bool) -> ObjectClass {
    ObjectClass { name, pickupable, openable, toggleable, sliceable }
}

/// Class id c (1-based) is `OBJECT_CLASSES[c - 1]`.
pub const OBJECT_CLASSES: [ObjectClass; NUM_OBJECT_CLASSES - 1] = [
    obj("alarm clock", true, false, false, false),
    obj("apple", true, false, false, true),
    obj("arm chair", false, false, false, false),
    obj("baseball bat", true, false, false, false),
    obj("basketball", true, false, false, false),
    obj("bathtub", false, false, false, false),
    obj("bed", false, false, false, false),
    obj("book", true, true, false, false),
    obj("bowl", true, false, false, false),
    obj("box", true, true, false, false),
    obj("bread", true, false, false, true),
    obj("butter knife", true, false, false, false),
    obj("cabinet", false, true, false, false),
    obj("candle", true, false, false, false),
    obj("cd", true, false, false, false),
    obj("cell phone", true, false, true, false),
    obj("cloth", true, false, false, false),
    obj("coffee machine", false, false, true, false),
    obj("coffee table", false, false, false, false),
    obj("counter top", false, false, false, false),
    obj("credit card", true, false, false, false),
    obj("cup", true, false, false, false),
    obj("desk", false, false, false, false),
    obj("desk lamp", false, false, true, false),
    obj("dining table", false, false, false, false),
    obj("dish sponge", true, false, false, false),
    obj("drawer", false, true, false, false),
    obj("dresser", false, true, false, false),
    obj("egg", true, false, false, true),
    obj("floor lamp", false, false, true, false),
    obj("fork", true, false, false, false),
    obj("fridge", false, true, false, false),
    obj("garbage can", false, false, false, false),
    obj("glass bottle", true, false, false, false),
    obj("hand towel", true, false, false, false),
    obj("kettle", true, true, false, false),
    obj("key chain", true, false, false, false),
    obj("knife", true, false, false, false),
    obj("ladle", true, false, false, false),
    obj("laptop", true, true, true, false),
    obj("laundry hamper", false, false, false, false),
    obj("lettuce", true, false, false, true),
    obj("light switch", false, false, true, false),
    obj("microwave", false, true, true, false),
    obj("mug", true, false, false, false),
    obj("newspaper", true, false, false, false),
    obj("night stand", false, false, false, false),
    obj("ottoman", false, false, false, false),
    obj("pan", true, false, false, false),
    obj("paper towel roll", true, false, false, false),
    obj("pen", true, false, false, false),
    obj("pencil", true, false, false, false),
    obj("pepper shaker", true, false, false, false),
    obj("pillow", true, false, false, false),
    obj("plate", true, false, false, false),
    obj("plunger", true, false, false, false),
    obj("pot", true, false, false, false),
    obj("potato", true, false, false, true),
    obj("remote control", true, false, false, false),
    obj("safe", false, true, false, false),
    obj("salt shaker", true, false, false, false),
    obj("shelf", false, false, false, false),
    obj("side table", false, false, false, false),
    obj("sink", false, false, false, false),
    obj("soap bar", true, false, false, false),
    obj("soap bottle", true, false, false, false),
    obj("sofa", false, false, false, false),
    obj("spatula", true, false, false, false),
    obj("spoon", true, false, false, false),
    obj("spray bottle", true, false, false, false),
    obj("statue", true, false, false, false),
    obj("stove burner", false, false, true, false),
    obj("television", false, false, true, false),
    obj("tennis racket", true, false, false, false),
    obj("tissue box", true, false, false, false),
    obj("toaster", false, false, true, false),
    obj("toilet", false, true, false, false),
    obj("toilet paper", true, false, false, false),
    obj("tomato", true, false, false, true),
    obj("tv stand", false, false, false, false),
    obj("vase", true, false, false, false),
    obj("watch", true, false, false, false),
    obj("watering can", true, false, false, false),
    obj("wine bottle", true, false, false, false),
];

pub fn object_class(class: usize) -> &'static ObjectClass {
    assert!(class >= 1 && class < NUM_OBJECT_CLASSES, "class {class} out of range");
    &OBJECT_CLASSES[class - 1]
}

pub fn object_name(class: usize) -> &'static str {
    if class == NO_OBJECT {
        "NoObject"
    } else {
        object_class(class).name
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("word {word:?} at position {position} is not in the vocabulary")]
    UnknownWord { word: String, position: usize },
}

/// Goal marker and template words, before object-name words are appended.
const GOAL_MARKER: &str = "<<goal>>";
const TEMPLATE_WORDS: [&str; 23] = [
    "pick", "up", "the", "grab", "put", "it", "near", "by", "open", "pull", "close", "shut",
    "turn", "on", "off", "switch", "slice", "cut", "and", "then", "go", "to", ".",
];

/// Word-level instruction vocabulary: goal marker, template words, then
/// each object-name word in catalog order, deduplicated.
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::build()
    }
}

impl Vocab {
    pub fn build() -> Vocab {
        let mut words: Vec<String> = Vec::new();
        let mut index = BTreeMap::new();
        let push = |w: &str, words: &mut Vec<String>, index: &mut BTreeMap<String, usize>| {
            if !index.contains_key(w) {
                index.insert(w.to_string(), words.len());
                words.push(w.to_string());
            }
        };
        push(GOAL_MARKER, &mut words, &mut index);
        for w in TEMPLATE_WORDS {
            push(w, &mut words, &mut index);
        }
        for class in &OBJECT_CLASSES {
            for w in class.name.split_whitespace() {
                push(w, &mut words, &mut index);
            }
        }
        Vocab { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn goal_marker(&self) -> usize {
        0
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        text.split_whitespace()
            .enumerate()
            .map(|(position, word)| {
                self.index
                    .get(word)
                    .copied()
                    .ok_or_else(|| VocabError::UnknownWord { word: word.to_string(), position })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_exactly_84_distinct_names() {
        assert_eq!(OBJECT_CLASSES.len(), 84);
        for (i, a) in OBJECT_CLASSES.iter().enumerate() {
            for b in &OBJECT_CLASSES[i + 1..] {
                assert_ne!(a.name, b.name);
            }
        }
    }

    #[test]
    fn every_capability_has_instances() {
        assert!(OBJECT_CLASSES.iter().filter(|c| c.pickupable).count() >= 40);
        assert!(OBJECT_CLASSES.iter().filter(|c| c.openable).count() >= 5);
        assert!(OBJECT_CLASSES.iter().filter(|c| c.toggleable).count() >= 5);
        assert!(OBJECT_CLASSES.iter().filter(|c| c.sliceable).count() >= 5);
    }

    #[test]
    fn vocab_round_trips_every_object_name() {
        let vocab = Vocab::build();
        assert!(vocab.size() < 256, "desk-scale vocabulary");
        for class in 1..NUM_OBJECT_CLASSES {
            let ids = vocab.tokenize(object_name(class)).unwrap();
            let back: Vec<&str> = ids.iter().map(|&i| vocab.word(i)).collect();
            assert_eq!(back.join(" "), object_name(class));
        }
    }

    #[test]
    fn unknown_words_are_reported_with_position() {
        let vocab = Vocab::build();
        let err = vocab.tokenize("open the warp gate").unwrap_err();
        let VocabError::UnknownWord { word, position } = err;
        assert_eq!(word, "warp");
        assert_eq!(position, 2);
    }

    #[test]
    fn goal_marker_is_token_zero() {
        let vocab = Vocab::build();
        assert_eq!(vocab.tokenize("<<goal>>").unwrap(), vec![0]);
    }
}
