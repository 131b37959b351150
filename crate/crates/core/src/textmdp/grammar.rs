use thiserror::Error;

use super::{Action, ActionKind, Token, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotRole {
    Filler,
    ActionKind,
    ActionArg,
    Format,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("utterance has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("token {0} is not a legal action kind")]
    IllegalKind(Token),
    #[error("token {0} is not a legal action argument")]
    IllegalArg(Token),
}

/// Slot layout of an environment's utterances and the parser over it.
///
/// Only the ACTION_KIND slot and (for payload-carrying kinds) the ACTION_ARG
/// slot are read; every other position is inert.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceGrammar {
    roles: Vec<SlotRole>,
    kind_slot: usize,
    arg_slot: Option<usize>,
    kinds: Vec<(Token, ActionKind)>,
    args: Vec<(Token, u8)>,
    actions: Vec<Action>,
}

impl UtteranceGrammar {
    pub(crate) fn new(
        roles: Vec<SlotRole>,
        kinds: Vec<(Token, ActionKind)>,
        args: Vec<(Token, u8)>,
        actions: Vec<Action>,
    ) -> Self {
        let kind_slots: Vec<usize> =
            roles.iter().enumerate().filter(|(_, r)| **r == SlotRole::ActionKind).map(|(i, _)| i).collect();
        assert_eq!(kind_slots.len(), 1, "exactly one ACTION_KIND slot");
        let arg_slot = roles.iter().position(|r| *r == SlotRole::ActionArg);
        let has_payload = kinds.iter().any(|(_, k)| k.takes_payload());
        assert_eq!(arg_slot.is_some(), has_payload, "ACTION_ARG only where payloads exist");
        assert_eq!(actions[0], Action::NOOP, "class 0 is NOOP");
        Self { roles, kind_slot: kind_slots[0], arg_slot, kinds, args, actions }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn roles(&self) -> &[SlotRole] {
        &self.roles
    }

    pub fn kind_slot(&self) -> usize {
        self.kind_slot
    }

    pub fn arg_slot(&self) -> Option<usize> {
        self.arg_slot
    }

    /// Legal tokens for slot `i`, or `None` when any token is accepted.
    pub fn legal_tokens(&self, i: usize) -> Option<Vec<Token>> {
        match self.roles[i] {
            SlotRole::ActionKind => Some(self.kinds.iter().map(|(t, _)| *t).collect()),
            SlotRole::ActionArg => Some(self.args.iter().map(|(t, _)| *t).collect()),
            SlotRole::Filler | SlotRole::Format => None,
        }
    }

    /// The environment's action set; the index is the SCM class id.
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_class(&self, a: &Action) -> Option<usize> {
        self.actions.iter().position(|x| x == a)
    }

    pub fn parse(&self, y: &Utterance) -> Result<Action, ParseError> {
        self.parse_tokens(y.tokens())
    }

    pub fn parse_tokens(&self, y: &[Token]) -> Result<Action, ParseError> {
        if y.len() != self.roles.len() {
            return Err(ParseError::BadLength { expected: self.roles.len(), got: y.len() });
        }
        let kt = y[self.kind_slot];
        let kind = self.kinds.iter().find(|(t, _)| *t == kt).map(|(_, k)| *k).ok_or(ParseError::IllegalKind(kt))?;
        if !kind.takes_payload() {
            return Ok(Action::simple(kind));
        }
        let slot = self.arg_slot.expect("payload kinds imply an arg slot");
        let at = y[slot];
        let arg = self.args.iter().find(|(t, _)| *t == at).map(|(_, a)| *a).ok_or(ParseError::IllegalArg(at))?;
        Ok(Action { kind, payload: Some(arg) })
    }

    /// Class label for the SCM: parse errors fold into NOOP (class 0).
    pub fn label(&self, y: &[Token]) -> usize {
        match self.parse_tokens(y) {
            Ok(a) => self.action_class(&a).unwrap_or(0),
            Err(_) => 0,
        }
    }
}
