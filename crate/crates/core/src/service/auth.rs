//! Static bearer tokens and the endpoint access matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Participant,
    Curator,
    Facilitator,
    Admin,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Participant, Role::Curator, Role::Facilitator, Role::Admin];

    pub fn name(self) -> &'static str {
        match self {
            Role::Participant => "participant",
            Role::Curator => "curator",
            Role::Facilitator => "facilitator",
            Role::Admin => "admin",
        }
    }
}

/// What a request does, one variant per endpoint group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    ReadDiscussion,
    ManageDiscussion,
    Contribute,
    UploadTranscript,
    Import,
    ReadAnalytics,
    Distill,
    CreateEvent,
    Reflect,
    PublicView,
    FacilitatorView,
    DeliverPrompt,
    CloseEvent,
    CuratorStream,
}

impl Action {
    pub const ALL: [Action; 14] = [
        Action::ReadDiscussion,
        Action::ManageDiscussion,
        Action::Contribute,
        Action::UploadTranscript,
        Action::Import,
        Action::ReadAnalytics,
        Action::Distill,
        Action::CreateEvent,
        Action::Reflect,
        Action::PublicView,
        Action::FacilitatorView,
        Action::DeliverPrompt,
        Action::CloseEvent,
        Action::CuratorStream,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::ReadDiscussion => "read discussions",
            Action::ManageDiscussion => "manage discussions",
            Action::Contribute => "contribute",
            Action::UploadTranscript => "upload transcripts",
            Action::Import => "run imports",
            Action::ReadAnalytics => "read analytics",
            Action::Distill => "distill recommendations",
            Action::CreateEvent => "create events",
            Action::Reflect => "send reflections",
            Action::PublicView => "read the public view",
            Action::FacilitatorView => "read the facilitator view",
            Action::DeliverPrompt => "deliver prompts",
            Action::CloseEvent => "close events",
            Action::CuratorStream => "follow the curator stream",
        }
    }
}

/// Participants contribute, reflect and see the public view. Curators and
/// facilitators each add their own surface on top; admins do everything.
pub fn allowed(role: Role, action: Action) -> bool {
    use Action::*;
    let participant = matches!(action, ReadDiscussion | Contribute | Reflect | PublicView);
    match role {
        Role::Admin => true,
        Role::Participant => participant,
        Role::Curator => {
            participant || matches!(action, ManageDiscussion | UploadTranscript | Import | ReadAnalytics | Distill | CuratorStream)
        }
        Role::Facilitator => participant || matches!(action, CreateEvent | FacilitatorView | DeliverPrompt | CloseEvent | ReadAnalytics),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpec {
    /// Environment variable holding the token value.
    pub env: String,
    pub role: Role,
    /// Discussion or event id the token is limited to.
    #[serde(default)]
    pub scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub role: Role,
    pub scope: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Auth {
    tokens: HashMap<String, Grant>,
}

impl Auth {
    /// Resolves token values from the environment. A missing variable is a
    /// configuration error, as is one value used twice.
    pub fn from_env(specs: &[TokenSpec], lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let mut tokens = HashMap::new();
        for s in specs {
            let value = lookup(&s.env).filter(|v| !v.is_empty()).ok_or_else(|| ServiceError::Config(format!("token variable {} is not set", s.env)))?;
            if tokens.insert(value, Grant { role: s.role, scope: s.scope.clone() }).is_some() {
                return Err(ServiceError::Config(format!("token in {} is shared with another grant", s.env)));
            }
        }
        Ok(Self { tokens })
    }

    pub fn with_tokens(tokens: impl IntoIterator<Item = (String, Grant)>) -> Self {
        Self { tokens: tokens.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token and role check without scope, for requests whose resource is
    /// only known after parsing or lookup.
    pub fn check_role(&self, header: Option<&str>, action: Action) -> Result<Role, ServiceError> {
        let token = header.and_then(|h| h.strip_prefix("Bearer ")).map(str::trim).ok_or(ServiceError::Unauthorized)?;
        let grant = self.tokens.get(token).ok_or(ServiceError::Unauthorized)?;
        if !allowed(grant.role, action) {
            return Err(ServiceError::Forbidden { role: grant.role.name().into(), action: action.name().into() });
        }
        Ok(grant.role)
    }

    /// `resource` is the discussion or event id addressed, if any.
    pub fn authorize(&self, header: Option<&str>, action: Action, resource: Option<&str>) -> Result<Role, ServiceError> {
        self.check_role(header, action)?;
        let token = header.and_then(|h| h.strip_prefix("Bearer ")).map(str::trim).unwrap_or_default();
        let grant = &self.tokens[token];
        let in_scope = match (&grant.scope, resource) {
            (None, _) => true,
            (Some(s), Some(r)) => s == r,
            (Some(_), None) => false,
        };
        if grant.role != Role::Admin && !in_scope {
            return Err(ServiceError::Forbidden { role: grant.role.name().into(), action: action.name().into() });
        }
        Ok(grant.role)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn participant_surface() {
        let granted: Vec<Action> = Action::ALL.into_iter().filter(|&a| allowed(Role::Participant, a)).collect();
        assert_eq!(granted, [Action::ReadDiscussion, Action::Contribute, Action::Reflect, Action::PublicView]);
        assert!(Action::ALL.iter().all(|&a| allowed(Role::Admin, a)));
        assert!(!allowed(Role::Curator, Action::FacilitatorView));
        assert!(!allowed(Role::Facilitator, Action::Import));
    }

    #[test]
    fn tokens_and_scopes() {
        let auth = Auth::with_tokens([
            ("p".to_string(), Grant { role: Role::Participant, scope: Some("ev1".into()) }),
            ("a".to_string(), Grant { role: Role::Admin, scope: None }),
        ]);
        assert!(matches!(auth.authorize(None, Action::Reflect, Some("ev1")), Err(ServiceError::Unauthorized)));
        assert!(matches!(auth.authorize(Some("Bearer zz"), Action::Reflect, Some("ev1")), Err(ServiceError::Unauthorized)));
        assert_eq!(auth.authorize(Some("Bearer p"), Action::Reflect, Some("ev1")).unwrap(), Role::Participant);
        assert!(matches!(auth.authorize(Some("Bearer p"), Action::Reflect, Some("ev2")), Err(ServiceError::Forbidden { .. })));
        assert!(matches!(auth.authorize(Some("Bearer p"), Action::Import, Some("ev1")), Err(ServiceError::Forbidden { .. })));
        assert_eq!(auth.authorize(Some("Bearer a"), Action::Import, None).unwrap(), Role::Admin);
    }

    #[test]
    fn env_indirection() {
        let specs = vec![TokenSpec { env: "TOK_A".into(), role: Role::Curator, scope: None }];
        let auth = Auth::from_env(&specs, |k| (k == "TOK_A").then(|| "secret".to_string())).unwrap();
        assert_eq!(auth.authorize(Some("Bearer secret"), Action::Import, None).unwrap(), Role::Curator);
        assert!(Auth::from_env(&specs, |_| None).is_err());
    }
}
