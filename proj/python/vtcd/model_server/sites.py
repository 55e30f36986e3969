from dataclasses import dataclass
from typing import Optional

from .errors import invalid

FACETS = ("key", "query", "value", "residual")


@dataclass(frozen=True, order=True)
class Site:
    model_id: str
    layer: int
    facet: str = "residual"
    head: Optional[int] = None

    @staticmethod
    def residual(model_id, layer):
        return Site(model_id, layer, "residual", None)

    @staticmethod
    def attention(model_id, layer, head, facet):
        return Site(model_id, layer, facet, head)

    def validate(self):
        if self.facet not in FACETS:
            raise invalid(f"unknown facet '{self.facet}'")
        if self.layer < 1:
            raise invalid("site layer must be >= 1")
        if self.facet == "residual" and self.head is not None:
            raise invalid("residual site cannot name a head")
        if self.facet != "residual" and (self.head is None or self.head < 0):
            raise invalid("attention site requires a head index >= 0")
        return self

    @property
    def tag(self):
        out = f"L{self.layer}"
        if self.head is not None:
            out += f"_H{self.head}"
        return out + "_" + self.facet

    def to_json(self):
        return {"model_id": self.model_id, "layer": self.layer, "facet": self.facet, "head": self.head}

    @staticmethod
    def from_json(j):
        if not isinstance(j, dict):
            raise invalid("site must be an object")
        try:
            head = j.get("head")
            site = Site(str(j.get("model_id", "")), int(j["layer"]), str(j["facet"]),
                        None if head is None else int(head))
        except (KeyError, TypeError, ValueError) as e:
            raise invalid(f"bad site: {e}") from None
        return site.validate()
