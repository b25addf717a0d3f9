use super::DataError;

pub const DEFAULT_NUM_CLASSES: usize = 18;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Category {
    pub name: String,
    pub definition: String,
}

/// Ordered activity names; the position of a category is its id.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    pub categories: Vec<Category>,
}

// The first six entries have dedicated generator scripts.
const FULL: [(&str, &str); 21] = [
    ("PnR", "screener sets a pick for the ball handler and the two play it together"),
    ("ISO", "ball handler attacks one-on-one while teammates stay away"),
    ("Basket Cut", "off-ball player cuts toward the rim, not along the baseline"),
    ("Exit", "cross screen in the paint frees a player toward the arc"),
    ("Cross", "off-ball player uses a cross screen to change sides"),
    ("DHO", "ball handler dribbles toward a teammate and hands the ball off"),
    ("Flare", "off-ball player uses a screen to drift away from the ball"),
    ("Post", "ball handler works in the low post"),
    ("Pop", "off-ball player steps from inside the arc to outside it"),
    ("Up", "back screen high, screened player heads toward the baseline"),
    ("Down", "screen near the baseline, screened player heads up the court"),
    ("HO", "player comes to the ball handler and takes a handoff"),
    ("FHO", "player approaches for a handoff but circles around instead"),
    ("Keep", "ball handler creates their own shot"),
    ("Playmaking", "ball handler at the elbow, free-throw line or post runs the play"),
    ("Shuffle", "off-ball player cuts diagonally from the top to the far corner"),
    ("Baseline Cut", "off-ball player cuts along the baseline toward the rim"),
    ("Through", "off-ball player crosses the court without a screen"),
    ("Pin", "positional screen for an off-ball player along the sideline, low"),
    ("Reverse", "screened player comes back toward the ball from the weak side"),
    ("Slip", "screener leaves early instead of finishing the screen"),
];

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_pairs(&FULL[..DEFAULT_NUM_CLASSES])
    }
}

impl Vocabulary {
    /// All 21 movements, including the three left out of the default.
    pub fn full() -> Self {
        Self::from_pairs(&FULL)
    }

    fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self {
            categories: pairs
                .iter()
                .map(|(n, d)| Category {
                    name: n.to_string(),
                    definition: d.to_string(),
                })
                .collect(),
        }
    }

    /// The first `n` default categories.
    pub fn first(n: usize) -> Result<Self, DataError> {
        if n == 0 || n > FULL.len() {
            return Err(super::invariant("vocabulary", format!("cannot take {n} categories")));
        }
        Ok(Self::from_pairs(&FULL[..n]))
    }

    pub fn new(categories: Vec<Category>) -> Result<Self, DataError> {
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|o| o.name == c.name) {
                return Err(super::invariant(format!("vocabulary[{i}]"), format!("duplicate name {:?}", c.name)));
            }
        }
        Ok(Self { categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.categories[id].name
    }

    pub fn names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }
}
