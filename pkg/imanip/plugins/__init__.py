from .base_plugin import ExpertScript, SkillPlugin
from .push_plugin import SlideBlockPlugin, PressButtonPlugin, PressTwoPlugin, SweepToZonePlugin
from .grasp_plugin import PickPlacePlugin, StackTwoPlugin, LiftBlockPlugin, PlaceTwoPlugin
from .drawer_plugin import OpenDrawerPlugin, CloseDrawerPlugin

# catalog order; schedules assign skills in this order
SKILL_PLUGINS = (
    SlideBlockPlugin(),
    PressButtonPlugin(),
    PickPlacePlugin(),
    OpenDrawerPlugin(),
    StackTwoPlugin(),
    SweepToZonePlugin(),
    LiftBlockPlugin(),
    CloseDrawerPlugin(),
    PressTwoPlugin(),
    PlaceTwoPlugin(),
)

__all__ = [
    "ExpertScript",
    "SkillPlugin",
    "SlideBlockPlugin",
    "PressButtonPlugin",
    "PressTwoPlugin",
    "SweepToZonePlugin",
    "PickPlacePlugin",
    "StackTwoPlugin",
    "LiftBlockPlugin",
    "PlaceTwoPlugin",
    "OpenDrawerPlugin",
    "CloseDrawerPlugin",
    "SKILL_PLUGINS",
]
