// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word lists for the toy datasets.

pub const POSITIVE_ADJECTIVES_TRAIN: [&str; 31] = [
    "perfect",
    "fantastic",
    "delightful",
    "cheerful",
    "good",
    "remarkable",
    "satisfactory",
    "wonderful",
    "nice",
    "fabulous",
    "outstanding",
    "satisfying",
    "awesome",
    "exceptional",
    "adequate",
    "incredible",
    "extraordinary",
    "amazing",
    "decent",
    "lovely",
    "brilliant",
    "charming",
    "terrific",
    "superb",
    "spectacular",
    "great",
    "splendid",
    "beautiful",
    "positive",
    "excellent",
    "pleasant",
];

pub const NEGATIVE_ADJECTIVES_TRAIN: [&str; 24] = [
    "dreadful",
    "bad",
    "dull",
    "depressing",
    "miserable",
    "tragic",
    "nasty",
    "inferior",
    "horrific",
    "terrible",
    "ugly",
    "disgusting",
    "disastrous",
    "annoying",
    "boring",
    "offensive",
    "frustrating",
    "wretched",
    "inadequate",
    "dire",
    "unpleasant",
    "horrible",
    "disappointing",
    "awful",
];

pub const POSITIVE_ADJECTIVES_TEST: [&str; 16] = [
    "stunning",
    "impressive",
    "admirable",
    "phenomenal",
    "radiant",
    "glorious",
    "magical",
    "pleasing",
    "lively",
    "warm",
    "strong",
    "helpful",
    "vivid",
    "modern",
    "crisp",
    "sweet",
];

pub const NEGATIVE_ADJECTIVES_TEST: [&str; 14] = [
    "foul",
    "vile",
    "appalling",
    "rotten",
    "grim",
    "dismal",
    "lazy",
    "poor",
    "rough",
    "noisy",
    "sour",
    "flat",
    "ancient",
    "bitter",
];

pub const POSITIVE_VERBS: [&str; 5] = ["enjoyed", "loved", "liked", "appreciated", "admired"];

pub const NEGATIVE_VERBS: [&str; 3] = ["hated", "disliked", "despised"];

pub const POSITIVE_ANSWERS: [&str; 5] = ["great", "amazing", "awesome", "good", "perfect"];

pub const NEGATIVE_ANSWERS: [&str; 5] = ["terrible", "awful", "bad", "horrible", "disgusting"];

pub const NAMES: [&str; 13] = [
    "John", "Anne", "Mark", "Mary", "Peter", "Paul", "James", "Sarah", "Mike", "Tom", "Carl", "Sam", "Jack",
];

/// Mood-story verb pairs `(first, second)` for each sentiment.
pub const MOOD_POSITIVE_VERBS: (&str, &str) = ("loves", "joins");
pub const MOOD_NEGATIVE_VERBS: (&str, &str) = ("hates", "avoids");

pub const MOOD_ANSWERS: (&str, &str) = ("excited", "nervous");
