"""Test package for Azure DevOps Entitlement Reporting."""