import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixtures
from premind.media import Frame


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("videos")


@pytest.fixture(scope="session")
def deck_video(fixture_dir):
    return fixtures.five_slide_deck(fixture_dir / "deck.avi")


@pytest.fixture(scope="session")
def long_shot_video(fixture_dir):
    return fixtures.long_shot_three_slides(fixture_dir / "longshot.avi")


@pytest.fixture(scope="session")
def two_slide(fixture_dir):
    return fixtures.two_slide_video(fixture_dir / "twoslide.avi")


@pytest.fixture(scope="session")
def black_clip(fixture_dir):
    return fixtures.black_video(fixture_dir / "black.avi")


@pytest.fixture(scope="session")
def cut_clip(fixture_dir):
    return fixtures.black_white_cut(fixture_dir / "cut.avi")


@pytest.fixture(scope="session")
def three_slide_clip(fixture_dir):
    return fixtures.three_slide_video(fixture_dir / "threeslide.avi")


def solid_frame(rgb, size=(64, 48), t=0.0) -> Frame:
    w, h = size
    img = np.zeros((h, w, 3), np.uint8)
    img[:] = rgb
    return Frame(img, t)


def noise_frame(seed, size=(64, 48), t=0.0) -> Frame:
    w, h = size
    rng = np.random.default_rng(seed)
    return Frame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), t)
