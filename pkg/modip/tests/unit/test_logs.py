import logging

import pytest

from modip.utils.logs import humanize_milliseconds, time_it


@pytest.mark.parametrize(
    "elapsed, expected",
    [
        (0, "0 ms."),
        (11, "11 ms."),
        (4200, "4,200 ms."),
        (30 * 1000, '30"'),
        (30 * 1000 + 100, '30.1"'),
        (65 * 1000, "1'5\""),
        ((115 * 60 + 10) * 1000, "1h55'"),
    ],
)
def test_humanize_milliseconds(elapsed, expected):
    assert humanize_milliseconds(elapsed) == expected


class TestTimeIt:
    def test_logs_the_duration(self, caplog):
        @time_it
        def work(x):
            return x * 2

        with caplog.at_level(logging.DEBUG, logger="modip.performance"):
            assert work(21) == 42
        assert "work completed in" in caplog.text

    def test_logs_even_when_failing(self, caplog):
        @time_it
        def broken():
            raise RuntimeError("boom")

        with caplog.at_level(logging.DEBUG, logger="modip.performance"):
            with pytest.raises(RuntimeError):
                broken()
        assert "broken completed in" in caplog.text
