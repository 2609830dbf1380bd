use std::collections::{HashMap, VecDeque};

use proptest::prelude::*;
use trilogy_agents::scheduler::{Admission, Scheduler, ServiceTicket, TicketState};

#[derive(Debug, Clone)]
enum Op {
    Submit,
    Complete,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![3 => Just(Op::Submit), 2 => Just(Op::Complete)]
}

proptest! {
    #[test]
    fn bounded_fifo_with_shrinking_positions(max in 1u32..5, ops in proptest::collection::vec(op(), 0..200)) {
        let mut s = Scheduler::new();
        s.add_service("x", max);
        let mut running: VecDeque<u32> = VecDeque::new();
        let mut started: Vec<u32> = Vec::new();
        let mut tickets: HashMap<u32, ServiceTicket> = HashMap::new();
        let mut next = 0u32;
        let apply_positions = |s: &Scheduler<u32>, tickets: &mut HashMap<u32, ServiceTicket>| {
            for (pos, id) in s.waiting("x") {
                let t = tickets.get_mut(id).unwrap();
                if t.queue_position != Some(pos) {
                    t.queued(pos).unwrap();
                }
            }
        };
        for op in ops {
            match op {
                Op::Submit => {
                    let id = next;
                    next += 1;
                    tickets.insert(id, ServiceTicket::new(id.to_string()));
                    match s.submit("x", id).unwrap() {
                        Admission::Run(got) => {
                            prop_assert_eq!(got, id);
                            running.push_back(id);
                            started.push(id);
                        }
                        Admission::Queued(pos) => {
                            prop_assert_eq!(pos as usize, s.queued("x"));
                            prop_assert_eq!(s.running("x"), max as usize);
                        }
                    }
                }
                Op::Complete => {
                    if let Some(done) = running.pop_front() {
                        tickets.get_mut(&done).unwrap().finish(None).unwrap();
                        if let Some(id) = s.complete("x") {
                            running.push_back(id);
                            started.push(id);
                        }
                    }
                }
            }
            prop_assert!(s.running("x") <= max as usize);
            prop_assert_eq!(s.running("x"), running.len());
            apply_positions(&s, &mut tickets);
        }
        // Grants happen in submission order.
        prop_assert!(started.windows(2).all(|w| w[0] < w[1]));
        // Draining grants every waiting request.
        while let Some(done) = running.pop_front() {
            tickets.get_mut(&done).unwrap().finish(None).unwrap();
            if let Some(id) = s.complete("x") {
                running.push_back(id);
                started.push(id);
            }
            apply_positions(&s, &mut tickets);
        }
        prop_assert_eq!(started, (0..next).collect::<Vec<_>>());
        prop_assert!(tickets.values().all(|t| t.state == TicketState::Done));
    }
}
