//! The operator vocabulary shared by expression trees, interval analysis and
//! the search operators.

use serde::{Deserialize, Serialize};

/// An operator from the function set. `Add`..`Div` are binary, the rest unary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorId {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Log,
}

impl OperatorId {
    /// The full function set, binary operators first.
    pub const ALL: [OperatorId; 8] = [
        OperatorId::Add,
        OperatorId::Sub,
        OperatorId::Mul,
        OperatorId::Div,
        OperatorId::Sin,
        OperatorId::Cos,
        OperatorId::Exp,
        OperatorId::Log,
    ];

    pub fn arity(self) -> usize {
        if self.is_binary() {
            2
        } else {
            1
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            OperatorId::Add | OperatorId::Sub | OperatorId::Mul | OperatorId::Div
        )
    }

    /// Token used in the s-expression format.
    pub fn token(self) -> &'static str {
        match self {
            OperatorId::Add => "add",
            OperatorId::Sub => "sub",
            OperatorId::Mul => "mul",
            OperatorId::Div => "div",
            OperatorId::Sin => "sin",
            OperatorId::Cos => "cos",
            OperatorId::Exp => "exp",
            OperatorId::Log => "log",
        }
    }

    pub fn from_token(token: &str) -> Option<OperatorId> {
        OperatorId::ALL.into_iter().find(|op| op.token() == token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_split() {
        let binary: Vec<_> = OperatorId::ALL.iter().filter(|o| o.is_binary()).collect();
        let unary: Vec<_> = OperatorId::ALL.iter().filter(|o| !o.is_binary()).collect();
        assert_eq!(binary.len(), 4);
        assert_eq!(unary.len(), 4);
        assert!(binary.iter().all(|o| o.arity() == 2));
        assert!(unary.iter().all(|o| o.arity() == 1));
    }

    #[test]
    fn tokens_round_trip() {
        for op in OperatorId::ALL {
            assert_eq!(OperatorId::from_token(op.token()), Some(op));
        }
        assert_eq!(OperatorId::from_token("pow"), None);
    }
}
