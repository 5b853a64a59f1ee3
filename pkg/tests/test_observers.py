import pytest
from unittest.mock import Mock, patch
from app.observers import LoggingObserver, SummaryObserver
from app.run_outcome import RunOutcome, Winner

# Sample setup for mock outcome
outcome_mock = Mock(spec=RunOutcome)
outcome_mock.run_index = 3
outcome_mock.runtime = 21
outcome_mock.winner = Winner.X
outcome_mock.__str__ = Mock(return_value="run 3: X after 21 rounds (x0=600, n=1000)")

# Test cases for LoggingObserver

@patch('logging.debug')
def test_logging_observer_logs_outcome(logging_debug_mock):
    observer = LoggingObserver()
    observer.update(outcome_mock)
    logging_debug_mock.assert_called_once_with(
        "Run finished: run 3: X after 21 rounds (x0=600, n=1000)"
    )

def test_logging_observer_no_outcome():
    observer = LoggingObserver()
    with pytest.raises(AttributeError):
        observer.update(None)  # Passing None should raise an exception as there's no outcome

# Test cases for SummaryObserver

def test_summary_observer_tallies_winners():
    observer = SummaryObserver()
    for index, (winner, runtime) in enumerate([(Winner.X, 10), (Winner.Y, 12), (Winner.X, 14)]):
        observer.update(RunOutcome(index, runtime, winner, 500, 1000, 7))
    assert observer.runs == 3
    assert observer.winners[Winner.X] == 2
    assert observer.winners[Winner.Y] == 1
    assert observer.unresolved == 0
    assert observer.mean_runtime() == 12.0
    assert observer.summary() == "3 runs: X=2, Y=1, unresolved=0, mean runtime=12.000"

def test_summary_observer_empty():
    observer = SummaryObserver()
    assert observer.mean_runtime() == 0.0
    assert observer.summary() == "0 runs: X=0, Y=0, unresolved=0, mean runtime=0.000"

@patch('logging.warning')
def test_summary_observer_warns_on_unresolved(logging_warning_mock):
    observer = SummaryObserver()
    observer.update(RunOutcome(4, 300, Winner.UNRESOLVED, 500, 1000, 7))
    assert observer.unresolved == 1
    logging_warning_mock.assert_called_once_with("Run 4 hit the round cap at 300")

@patch('logging.warning')
def test_summary_observer_quiet_on_resolved(logging_warning_mock):
    observer = SummaryObserver()
    observer.update(RunOutcome(0, 9, Winner.Y, 400, 1000, 7))
    logging_warning_mock.assert_not_called()

def test_summary_observer_no_outcome():
    observer = SummaryObserver()
    with pytest.raises(AttributeError):
        observer.update(None)
