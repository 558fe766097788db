//! Decoders and rules that ship with the manager, evaluated before any
//! plugin-provided ones.

pub const DECODERS: &str = r#"<decoder name="sshd">
<prematch>Failed password for </prematch>
</decoder>
<decoder name="sshd">
<parent>sshd</parent>
<regex>Failed password for invalid user (\.+) from (\.+) port (\d+)</regex>
<order>dstuser, srcip, srcport</order>
</decoder>
<decoder name="sshd">
<parent>sshd</parent>
<regex>Failed password for (\.+) from (\.+) port (\d+)</regex>
<order>dstuser, srcip, srcport</order>
</decoder>

<decoder name="syscheck">
<prematch>SOC_NES: syscheck: File '</prematch>
</decoder>
<decoder name="syscheck_new_entry">
<parent>syscheck</parent>
<regex>File '(\.+)' added sha256=(\w+)</regex>
<order>file, sha256</order>
</decoder>
<decoder name="syscheck_integrity_changed">
<parent>syscheck</parent>
<regex>File '(\.+)' modified sha256=(\w+)</regex>
<order>file, sha256</order>
</decoder>
<decoder name="syscheck_deleted">
<parent>syscheck</parent>
<regex>File '(\.+)' deleted</regex>
<order>file</order>
</decoder>

<decoder name="virustotal">
<prematch>SOC_NES: reputation: </prematch>
</decoder>
<decoder name="virustotal">
<parent>virustotal</parent>
<regex>reputation: (\d+)/(\d+) engines flagged '(\.+)' sha256=(\w+) (\.+)</regex>
<order>positives, total, file, sha256, permalink</order>
</decoder>
"#;

pub const RULES: &str = r#"<rule id="5716" level="5">
<decoded_as>sshd</decoded_as>
<description>sshd: authentication failed.</description>
<group>authentication_failed</group>
</rule>

<rule id="554" level="5">
<decoded_as>syscheck_new_entry</decoded_as>
<description>File added to the system.</description>
<group>syscheck</group>
</rule>
<rule id="550" level="7">
<decoded_as>syscheck_integrity_changed</decoded_as>
<description>Integrity checksum changed.</description>
<group>syscheck</group>
</rule>
<rule id="553" level="7">
<decoded_as>syscheck_deleted</decoded_as>
<description>File deleted.</description>
<group>syscheck</group>
</rule>

<rule id="87105" level="12">
<decoded_as>virustotal</decoded_as>
<description>Reputation scan: file flagged by antivirus engines.</description>
<group>virustotal</group>
</rule>
"#;

/// Group carried by file-integrity alerts.
pub const FIM_GROUP: &str = "syscheck";
pub const AUTH_FAILED_GROUP: &str = "authentication_failed";
pub const REPUTATION_GROUP: &str = "virustotal";

/// Message body the reputation decoder reads.
pub fn reputation_message(positives: u32, total: u32, file: &str, sha256: &str, permalink: &str) -> String {
    soc_core::engine::syslog::envelope(
        "reputation",
        &format!("{positives}/{total} engines flagged '{file}' sha256={sha256} {permalink}"),
    )
}
