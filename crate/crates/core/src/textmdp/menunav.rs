use super::*;

/// Screens of the navigation graph. `Share` is the trap: clicks do nothing
/// there and only BACK or HOME leave it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Screen {
    Home,
    Browser,
    Search,
    Results,
    Share,
    Settings,
}

impl Screen {
    pub const ALL: [Screen; 6] =
        [Screen::Home, Screen::Browser, Screen::Search, Screen::Results, Screen::Share, Screen::Settings];

    pub fn from_index(i: u8) -> Screen {
        Self::ALL[i as usize]
    }

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|s| *s == self).unwrap() as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Screen::Home => "home",
            Screen::Browser => "browser",
            Screen::Search => "search",
            Screen::Results => "results",
            Screen::Share => "share",
            Screen::Settings => "settings",
        }
    }

    pub fn from_name(name: &str) -> Option<Screen> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// Reach the results screen with a typed query:
/// HOME -click0-> BROWSER -click0-> SEARCH -type-> (typed) -click0-> RESULTS.
#[derive(Debug, Clone)]
pub struct MenuNav {
    pub horizon: u32,
    pub vocab: Vocab,
    pub grammar: UtteranceGrammar,
}

pub const CLICK_TOKEN: Token = 2;
pub const BACK_TOKEN: Token = 3;
pub const HOME_TOKEN: Token = 4;
pub const TYPE_TOKEN: Token = 5;
pub const NOOP_TOKEN: Token = 6;
/// Argument tokens "0".."3" are 7..=10.
pub const ARG0_TOKEN: Token = 7;
pub const FORMAT_TOKEN: Token = 11;

impl Default for MenuNav {
    fn default() -> Self {
        let vocab = Vocab::new(vec![
            "<null>", "<eos>", "click", "back", "home", "type", "noop", "0", "1", "2", "3", "action:", "i", "need",
            "to", "open", "the", "browser", "search", "for", "item", "then", "go", "tap", "button", "screen", "now",
            "first", "find", "bar", "next", "page",
        ]);
        let grammar = UtteranceGrammar::new(
            vec![
                SlotRole::Filler,
                SlotRole::Filler,
                SlotRole::Filler,
                SlotRole::Format,
                SlotRole::ActionKind,
                SlotRole::ActionArg,
            ],
            vec![
                (CLICK_TOKEN, ActionKind::Click),
                (BACK_TOKEN, ActionKind::Back),
                (HOME_TOKEN, ActionKind::Home),
                (TYPE_TOKEN, ActionKind::Type),
                (NOOP_TOKEN, ActionKind::Noop),
            ],
            (0..4).map(|k| (ARG0_TOKEN + k as Token, k)).collect(),
            vec![
                Action::NOOP,
                Action::click(0),
                Action::click(1),
                Action::click(2),
                Action::click(3),
                Action::simple(ActionKind::Back),
                Action::simple(ActionKind::Home),
                Action::simple(ActionKind::Type),
            ],
        );
        Self { horizon: 10, vocab, grammar }
    }
}

impl MenuNav {
    pub fn feature_cards(&self) -> Vec<usize> {
        vec![Screen::ALL.len(), 2]
    }

    pub fn reset(&self, _seed: u64) -> EnvState {
        EnvState { features: vec![Screen::Home.index(), 0], step_count: 0, done: false }
    }

    fn transition(screen: Screen, typed: bool, a: &Action) -> (Screen, bool) {
        use Screen as S;
        match (a.kind, screen) {
            (ActionKind::Noop, s) => (s, typed),
            (ActionKind::Home, _) => (S::Home, false),
            (ActionKind::Back, S::Home | S::Browser | S::Settings) => (S::Home, false),
            (ActionKind::Back, S::Search | S::Share | S::Results) => (S::Browser, false),
            (ActionKind::Type, S::Search) => (S::Search, true),
            (ActionKind::Type, s) => (s, typed),
            (ActionKind::Click, s) => match (s, a.payload.unwrap_or(u8::MAX)) {
                (S::Home, 0) => (S::Browser, false),
                (S::Home, 1) => (S::Settings, false),
                (S::Browser, 0) => (S::Search, false),
                (S::Browser, 1) => (S::Share, false),
                (S::Search, 0) if typed => (S::Results, true),
                (S::Search, 2) => (S::Share, false),
                (s, _) => (s, typed),
            },
            (ActionKind::Plus | ActionKind::Minus, s) => (s, typed),
        }
    }

    pub fn step(&self, s: &EnvState, a: &Action) -> StepOutcome {
        let screen = Screen::from_index(s.features[0]);
        let typed = s.features[1] == 1;
        let (next, typed2) = Self::transition(screen, typed, a);
        let success = next == Screen::Results && typed2;
        let reward = if success {
            SUCCESS_REWARD
        } else if a.kind == ActionKind::Noop {
            NOOP_PENALTY
        } else {
            STEP_PENALTY
        };
        let step_count = s.step_count + 1;
        let done = success || step_count >= self.horizon;
        StepOutcome {
            next_state: EnvState { features: vec![next.index(), typed2 as u8], step_count, done },
            reward,
            done,
            success,
        }
    }

    pub fn parse_state(&self, spec: &str) -> Result<EnvState, EnvError> {
        let mut screen = None;
        let mut typed = 0u8;
        for (k, v) in parse_kv(spec)? {
            match k.as_str() {
                "screen" => {
                    screen = Some(Screen::from_name(&v).ok_or_else(|| EnvError::BadStateSpec(format!("screen `{v}`")))?)
                }
                "typed" => {
                    typed = match v.as_str() {
                        "0" | "false" => 0,
                        "1" | "true" => 1,
                        _ => return Err(EnvError::BadStateSpec(format!("typed `{v}`"))),
                    }
                }
                _ => return Err(EnvError::BadStateSpec(format!("unknown key `{k}`"))),
            }
        }
        let screen = screen.ok_or_else(|| EnvError::BadStateSpec("menunav needs screen=<name>".into()))?;
        Ok(EnvState { features: vec![screen.index(), typed], step_count: 0, done: false })
    }

    pub fn transition_table(&self) -> String {
        let mut out = String::new();
        for screen in Screen::ALL {
            if screen == Screen::Results {
                continue;
            }
            for typed in [false, true] {
                if typed && screen != Screen::Search {
                    continue;
                }
                for a in self.grammar.actions() {
                    let (n, t) = Self::transition(screen, typed, a);
                    out.push_str(&format!("  {}{} --{}--> {}{}\n", screen.name(), if typed { "+typed" } else { "" }, a, n.name(), if t { "+typed" } else { "" }));
                }
            }
        }
        out.push_str(&format!(
            "  rewards: results+typed {SUCCESS_REWARD} (done), noop/parse error {NOOP_PENALTY}, otherwise {STEP_PENALTY}; horizon {}\n",
            self.horizon
        ));
        out
    }
}
