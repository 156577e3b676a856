"""Azure DevOps Entitlement Reporting Package."""