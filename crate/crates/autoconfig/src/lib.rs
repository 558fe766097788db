//! Topology-driven deployment: questionnaire, topology file, vault,
//! planner and executors.

pub mod deploy;
pub mod formatter;
pub mod plan;
pub mod topology;
pub mod vault;

pub use deploy::{execute_plan, DeploymentReport, LocalTransport, SshStub, StepFailure, Transport};
pub use formatter::{formatter, Answers, FormatError};
pub use plan::{plan_deployment, DeploymentPlan, Integrations, PlanError, PlanOptions};
pub use topology::{parse_topology, render_topology, DeviceType, TopologyEntry, TopologyError};
pub use vault::{vault_decrypt, vault_encrypt, VaultError};
