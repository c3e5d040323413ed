"""Application-aware multipath forwarding: classifier, controller and a
discrete-event network simulator to evaluate them."""

__version__ = "0.1.0"
