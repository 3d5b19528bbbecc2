from pydantic import BaseModel
from typing import List, Literal

Suite = Literal["transforms", "gradients", "oracles", "shapes"]
SUITES = ("transforms", "gradients", "oracles", "shapes")


class CheckResult(BaseModel):
    """Outcome of one verification check"""
    suite: Suite
    name: str
    passed: bool
    detail: str = ""


class VerificationReport(BaseModel):
    checks: List[CheckResult] = []

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]
