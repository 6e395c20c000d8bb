//! Built-in environments and tasks used by tests, examples and the CLI.
//!
//! * [`starbucks`]: a coffee-ordering task recorded step by step, with the
//!   distractor pages visited while backtracking.
//! * [`metric_example`]: three tasks with generated and golden trajectories
//!   whose step- and task-level scores are known by hand.
//! * [`ladder`]: a ten-step graph where every wrong click falls into a dead
//!   end, for Monte Carlo checks of the backtracking benefit.
//! * [`synthetic_suite`]: many small seeded tasks mixing all action kinds.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, BoundingBox, Direction};
use crate::environment::{ChainDataset, ChainTask, Edge, EnvironmentGraph};
use crate::page::{Page, Task};
use crate::rng::derive_seed;

fn bx(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).expect("fixture boxes are ordered")
}

fn click(name: &str, b: BoundingBox) -> Action {
    Action::click(name, b).expect("fixture action is well formed")
}

fn scroll(name: &str, b: BoundingBox, d: Direction) -> Action {
    Action::scroll(name, b, d).expect("fixture action is well formed")
}

fn input(name: &str, b: BoundingBox, text: &str) -> Action {
    Action::input(name, b, text).expect("fixture action is well formed")
}

fn edge(source: &str, action: &Action, target: &str) -> Edge {
    Edge {
        source: source.into(),
        action: action.clone(),
        target: target.into(),
    }
}

/// Every action and page needed to replay the Starbucks trace.
pub struct Starbucks {
    pub graph: EnvironmentGraph,
    pub task: Task,
    /// Per step, the attempts of the trace in order; the last one is adopted.
    pub trace: Vec<Vec<Action>>,
}

impl Starbucks {
    /// The golden page sequence as a chain task.
    pub fn chain(&self) -> ChainDataset {
        let mut pages = vec![self.graph.page(&self.task.start_page).unwrap().clone()];
        for a in &self.task.golden_actions {
            let last = pages.last().unwrap();
            let next = match self.graph.target(&last.page_id, a) {
                Some(t) => self.graph.page(t).unwrap().clone(),
                None => last.clone(),
            };
            pages.push(next);
        }
        let task = ChainTask::new(self.task.clone(), pages).expect("golden path replays");
        ChainDataset::new(vec![task]).expect("single task")
    }
}

pub const STARBUCKS_INSTRUCTION: &str =
    "I'd like to order a large cup of black tea latte, with extra Tahitian vanilla syrup, delivered to my home.";

pub fn starbucks() -> Starbucks {
    let back = click("BackButton", bx(46, 150, 138, 242));
    let delivery = click("delivery_entry", bx(375, 740, 704, 1032));
    let order = click("Order", bx(725, 2230, 900, 2380));
    let search = click("search", bx(530, 748, 783, 841));
    let type_query = input("input", bx(46, 242, 848, 346), "blact tea latte");
    let matcha = click("matcha latte", bx(60, 520, 330, 600));
    let run_search = click("search", bx(894, 230, 1034, 346));
    let add_result = click("addToCart", bx(953, 709, 1022, 778));

    let customize = bx(0, 1474, 1080, 2400);
    let stepper_add = click("StepperAdd", bx(964, 1329, 1046, 1411));
    let extra_large = click("ExtraLargeCup", bx(717, 1556, 1036, 1820));
    let hot = click("Hot", bx(44, 1930, 1036, 2059));
    let add_to_cart = click("addToCart", bx(385, 2126, 1034, 2253));
    let up = scroll("Customize", customize, Direction::Up);
    let down = scroll("Customize", customize, Direction::Down);
    let p6_space = vec![
        click("IngredientButton", bx(953, 637, 1068, 752)),
        back.clone(),
        click("StepperReduce", bx(790, 1329, 872, 1411)),
        stepper_add.clone(),
        click("MediumCup", bx(44, 1556, 363, 1820)),
        click("LargeCup", bx(382, 1556, 698, 1820)),
        extra_large.clone(),
        hot.clone(),
        click("Ice", bx(382, 1963, 698, 2059)),
        click("LightIce", bx(717, 1963, 1036, 2059)),
        click("resetRecipe", bx(46, 2126, 362, 2253)),
        add_to_cart.clone(),
        up.clone(),
        down.clone(),
        scroll("Customize", customize, Direction::Left),
        scroll("Customize", customize, Direction::Right),
    ];

    let options = bx(0, 160, 1080, 2100);
    let syrup_add = click("StepperAdd", bx(964, 905, 1046, 987));
    let syrup_reduce = click("StepperReduce", bx(790, 905, 872, 987));
    let options_up = scroll("Customize", options, Direction::Up);
    let options_down = scroll("Customize", options, Direction::Down);
    let bag = click("ShoppingBag", bx(890, 2230, 1040, 2380));
    let payment = click("Payment", bx(600, 2200, 1040, 2330));

    let img = |name: &str| format!(".../Starbucks{name}-screen.png");
    let page = |id: &str, space: Vec<Action>| Page::from_actions(id, id, space);
    let pages = vec![
        page("P1", vec![delivery.clone(), order.clone()]).with_image(img("0")),
        page("P2^1", vec![back.clone()]).with_image(img("0_order")),
        page("P2", vec![back.clone(), search.clone()]).with_image(img("0_10")),
        page("P3", vec![back.clone(), type_query.clone(), matcha.clone()]).with_image(img("0_10_5")),
        page("P4^1", vec![back.clone()]).with_image(img("0_10_5_matcha")),
        page("P4", vec![back.clone(), run_search.clone()]).with_image(img("0_10_5_2")),
        page("P5", vec![back.clone(), add_result.clone()]).with_image(img("0_10_5_2_3")),
        page("P6", p6_space).with_image(img("0_10_5_2_3_6")),
        // hot is already selected: a distinct capture of the same state
        Page::from_actions("P6-hot", "P6", vec![back.clone()]).with_image(img("0_10_5_2_3_6-hot")),
        page("P6-down", vec![back.clone(), up.clone()]).with_image(img("0_10_5_2_3_6-down")),
        page("P7^1", vec![back.clone()]).with_image(img("0_10_5_2_3_6-add")),
        page("P7^2", vec![back.clone()]).with_image(img("0_10_5_2_3_6-xl")),
        page(
            "P7",
            vec![
                syrup_reduce.clone(),
                syrup_add.clone(),
                options_up.clone(),
                options_down.clone(),
                add_to_cart.clone(),
            ],
        )
        .with_image(img("0_10_5_2_3_6-up")),
        page(
            "P8",
            vec![
                syrup_reduce.clone(),
                syrup_add.clone(),
                options_up.clone(),
                options_down.clone(),
                add_to_cart.clone(),
            ],
        )
        .with_image(img("0_10_5_2_3_6-up-syrup")),
        page("P9^1", vec![options_down.clone()]).with_image(img("0_10_5_2_3_6-up-syrup-up")),
        page("P9", vec![back.clone(), bag.clone()]).with_image(img("0_10_5_2_3_6_9")),
        page("P10", vec![back.clone(), payment.clone()]).with_image(img("0_10_5_2_3_6_9_1")),
        page("P11", vec![back.clone()]).with_image(img("0_10_5_2_3_6_9_1_4")),
    ];
    let edges = vec![
        edge("P1", &delivery, "P2"),
        edge("P1", &order, "P2^1"),
        edge("P2^1", &back, "P1"),
        edge("P2", &back, "P1"),
        edge("P2", &search, "P3"),
        edge("P3", &back, "P2"),
        edge("P3", &type_query, "P4"),
        edge("P3", &matcha, "P4^1"),
        edge("P4^1", &back, "P3"),
        edge("P4", &back, "P3"),
        edge("P4", &run_search, "P5"),
        edge("P5", &back, "P4"),
        edge("P5", &add_result, "P6"),
        edge("P6", &back, "P5"),
        edge("P6", &hot, "P6-hot"),
        edge("P6-hot", &back, "P5"),
        edge("P6", &stepper_add, "P7^1"),
        edge("P6", &extra_large, "P7^2"),
        edge("P6", &up, "P7"),
        edge("P6", &down, "P6-down"),
        edge("P6-down", &back, "P5"),
        edge("P6-down", &up, "P6"),
        edge("P7^1", &back, "P6"),
        edge("P7^2", &back, "P6"),
        edge("P7", &syrup_add, "P8"),
        edge("P7", &options_down, "P6"),
        edge("P8", &syrup_reduce, "P7"),
        edge("P8", &options_up, "P9^1"),
        edge("P8", &options_down, "P6"),
        edge("P8", &add_to_cart, "P9"),
        edge("P9^1", &options_down, "P8"),
        edge("P9", &back, "P8"),
        edge("P9", &bag, "P10"),
        edge("P10", &back, "P9"),
        edge("P10", &payment, "P11"),
        edge("P11", &back, "P10"),
    ];
    let graph = EnvironmentGraph::new(pages, edges).expect("starbucks graph is consistent");

    let golden = vec![
        delivery.clone(),
        search.clone(),
        type_query.clone(),
        run_search.clone(),
        add_result.clone(),
        up.clone(),
        syrup_add.clone(),
        add_to_cart.clone(),
        bag.clone(),
        payment.clone(),
        Action::Complete,
    ];
    let trace = vec![
        vec![order, delivery],
        vec![search],
        vec![matcha, type_query],
        vec![run_search],
        vec![add_result],
        vec![stepper_add, extra_large, up],
        vec![syrup_add],
        vec![options_up, add_to_cart],
        vec![bag],
        vec![payment],
        vec![Action::Complete],
    ];
    let task = Task {
        task_id: "starbucks-black-tea-latte".into(),
        instruction: STARBUCKS_INSTRUCTION.into(),
        start_page: "P1".into(),
        golden_actions: golden,
        golden_final_class: Some("P11".into()),
    };
    Starbucks { graph, task, trace }
}

/// Three tasks with a generated trajectory each, scored by hand: step
/// accuracy 7/10 (IoU) and 6/10 (text), task accuracy 0/3 (both), 1/3
/// (IoU), 0/3 (text), success 3/3.
pub struct MetricExample {
    pub graph: EnvironmentGraph,
    pub tasks: Vec<Task>,
    /// Generated action sequences, aligned with `tasks`.
    pub generated: Vec<Vec<Action>>,
}

pub fn metric_example() -> MetricExample {
    let mut pages = Vec::new();
    let mut edges = Vec::new();
    let mut add = |id: &str, class: &str, out: Vec<(Action, &str)>| {
        let space = out.iter().map(|(a, _)| a.clone()).collect();
        pages.push(Page::from_actions(id, class, space));
        for (a, t) in out {
            edges.push(edge(id, &a, t));
        }
    };
    let back = click("Back", bx(20, 40, 120, 140));

    // Task 1: the query text differs at step 2, same box.
    let t1_search = click("Search", bx(800, 60, 1040, 180));
    let t1_coffee = input("SearchBox", bx(40, 200, 1040, 320), "iced coffee");
    let t1_tea = input("SearchBox", bx(40, 200, 1040, 320), "green tea");
    let t1_first = click("FirstResult", bx(40, 400, 1040, 640));
    add("t1-home", "t1-home", vec![(t1_search.clone(), "t1-search")]);
    add(
        "t1-search",
        "t1-search",
        vec![(t1_coffee.clone(), "t1-coffee"), (t1_tea.clone(), "t1-tea")],
    );
    add("t1-coffee", "t1-results", vec![(t1_first.clone(), "t1-detail")]);
    add("t1-tea", "t1-results-tea", vec![(t1_first.clone(), "t1-detail-tea")]);
    add("t1-detail", "t1-detail", vec![(back.clone(), "t1-coffee")]);
    // a different route to the same key page
    add("t1-detail-tea", "t1-detail", vec![(back.clone(), "t1-tea")]);

    // Task 2: off the golden route from step 2, one extra step at the end.
    let t2_menu = click("Menu", bx(20, 2200, 200, 2380));
    let t2_settings = click("Settings", bx(40, 300, 1040, 420));
    let t2_profile = click("Profile", bx(40, 900, 1040, 1020));
    let t2_account = click("Account", bx(40, 500, 1040, 620));
    let t2_edit = click("EditAccount", bx(700, 1200, 1040, 1320));
    add("t2-home", "t2-home", vec![(t2_menu.clone(), "t2-menu")]);
    add(
        "t2-menu",
        "t2-menu",
        vec![(t2_settings.clone(), "t2-settings"), (t2_profile.clone(), "t2-profile")],
    );
    add("t2-settings", "t2-settings", vec![(t2_account.clone(), "t2-account")]);
    add("t2-profile", "t2-profile", vec![(t2_edit.clone(), "t2-account")]);
    add("t2-account", "t2-account", vec![(back.clone(), "t2-settings")]);

    // Task 3: wrong text at step 2, wrong box at step 3.
    let t3_cart = click("Cart", bx(880, 60, 1040, 180));
    let t3_two = input("Quantity", bx(300, 700, 780, 800), "2");
    let t3_three = input("Quantity", bx(300, 700, 780, 800), "3");
    let t3_checkout = click("Checkout", bx(40, 2100, 1040, 2260));
    let t3_checkout_top = click("Checkout", bx(40, 900, 1040, 1060));
    let t3_confirm = click("Confirm", bx(540, 2200, 1040, 2330));
    add("t3-home", "t3-home", vec![(t3_cart.clone(), "t3-cart")]);
    add(
        "t3-cart",
        "t3-cart",
        vec![(t3_two.clone(), "t3-qty2"), (t3_three.clone(), "t3-qty3")],
    );
    add("t3-qty2", "t3-qty2", vec![(t3_checkout.clone(), "t3-review")]);
    add("t3-qty3", "t3-qty3", vec![(t3_checkout_top.clone(), "t3-review-3")]);
    add("t3-review", "t3-review", vec![(t3_confirm.clone(), "t3-done")]);
    add("t3-review-3", "t3-review-3", vec![(t3_confirm.clone(), "t3-done-3")]);
    add("t3-done", "t3-done", vec![(back.clone(), "t3-review")]);
    add("t3-done-3", "t3-done", vec![(back.clone(), "t3-review-3")]);

    let graph = EnvironmentGraph::new(pages, edges).expect("metric example graph is consistent");
    let task = |id: &str, instruction: &str, start: &str, golden: Vec<Action>, key: &str| Task {
        task_id: id.into(),
        instruction: instruction.into(),
        start_page: start.into(),
        golden_actions: golden,
        golden_final_class: Some(key.into()),
    };
    let tasks = vec![
        task(
            "task-1",
            "Search for iced coffee and open the first result.",
            "t1-home",
            vec![t1_search.clone(), t1_coffee, t1_first.clone()],
            "t1-detail",
        ),
        task(
            "task-2",
            "Open the account settings.",
            "t2-home",
            vec![t2_menu.clone(), t2_settings, t2_account],
            "t2-account",
        ),
        task(
            "task-3",
            "Buy two of the items in the cart.",
            "t3-home",
            vec![t3_cart.clone(), t3_two, t3_checkout, t3_confirm.clone()],
            "t3-done",
        ),
    ];
    let generated = vec![
        vec![t1_search, t1_tea, t1_first],
        vec![t2_menu, t2_profile, t2_edit, back],
        vec![t3_cart, t3_three, t3_checkout_top, t3_confirm],
    ];
    MetricExample {
        graph,
        tasks,
        generated,
    }
}

/// Golden path `L0 -> L1 -> ... -> L<steps>` where every page also offers
/// `traps` wrong clicks, each leading to a page with no actions. The key
/// page is the last one.
pub fn ladder(steps: usize, traps: usize) -> (EnvironmentGraph, Task) {
    let mut pages = Vec::new();
    let mut edges = Vec::new();
    let mut golden = Vec::new();
    for i in 0..steps {
        let id = format!("L{i}");
        let next = click("Next", bx(40, 2000, 1040, 2200));
        let mut space = vec![next.clone()];
        edges.push(edge(&id, &next, &format!("L{}", i + 1)));
        for j in 0..traps {
            let y = 200 + 300 * j as u32;
            let trap = click(&format!("Option{j}"), bx(40, y, 1040, y + 200));
            let trap_id = format!("L{i}-trap{j}");
            edges.push(edge(&id, &trap, &trap_id));
            pages.push(Page::from_actions(trap_id.clone(), trap_id, vec![]));
            space.push(trap);
        }
        pages.push(Page::from_actions(id.clone(), id, space));
        golden.push(next);
    }
    let last = format!("L{steps}");
    pages.push(Page::from_actions(
        last.clone(),
        last.clone(),
        vec![click("Home", bx(20, 2200, 200, 2380))],
    ));
    golden.push(Action::Complete);
    let graph = EnvironmentGraph::new(pages, edges).expect("ladder graph is consistent");
    let task = Task {
        task_id: "ladder".into(),
        instruction: format!("Press next {steps} times."),
        start_page: "L0".into(),
        golden_actions: golden,
        golden_final_class: Some(last),
    };
    (graph, task)
}

/// `n` independent tasks of 2 to 6 steps on one graph. Each page offers the
/// golden action and a few seeded distractors of mixed kinds; distractors
/// lead to side pages one step away from the golden route.
pub fn synthetic_suite(n: usize, seed: u64) -> (EnvironmentGraph, Vec<Task>) {
    let mut pages = Vec::new();
    let mut edges = Vec::new();
    let mut tasks = Vec::new();
    let words = ["alpha", "bravo", "coffee", "delta", "echo", "latte", "matcha", "tango"];
    for t in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "suite", t as u64));
        let len = rng.random_range(2..=6);
        let mut golden = Vec::new();
        for s in 0..len {
            let id = format!("s{t}-{s}");
            let next_id = format!("s{t}-{}", s + 1);
            let mut space = Vec::new();
            let row = |k: u32| bx(40, 200 + 260 * k, 1040, 420 + 260 * k);
            let mut slots: Vec<u32> = (0..6).collect();
            slots.shuffle(&mut rng);
            let g = match rng.random_range(0..3) {
                0 => click(&format!("Go{s}"), row(slots[0])),
                1 => scroll("List", row(slots[0]), Direction::Down),
                _ => input("Field", row(slots[0]), words.choose(&mut rng).unwrap()),
            };
            edges.push(edge(&id, &g, &next_id));
            space.push(g.clone());
            for (k, slot) in slots[1..4].iter().enumerate() {
                let d = match k {
                    0 => click(&format!("Other{k}"), row(*slot)),
                    1 => scroll("List", row(*slot), Direction::Up),
                    _ => input("Field", row(*slot), "wrong text"),
                };
                let side = format!("{id}-side{k}");
                edges.push(edge(&id, &d, &side));
                let back = click("Back", bx(20, 40, 120, 140));
                edges.push(edge(&side, &back, &id));
                pages.push(Page::from_actions(side.clone(), side, vec![back]));
                space.push(d);
            }
            space.shuffle(&mut rng);
            pages.push(Page::from_actions(id.clone(), id, space));
            golden.push(g);
        }
        let last = format!("s{t}-{len}");
        pages.push(Page::from_actions(
            last.clone(),
            last.clone(),
            vec![click("Back", bx(20, 40, 120, 140))],
        ));
        golden.push(Action::Complete);
        tasks.push(Task {
            task_id: format!("suite-{t:03}"),
            instruction: format!("Synthetic task {t}."),
            start_page: format!("s{t}-0"),
            golden_actions: golden,
            golden_final_class: Some(last),
        });
    }
    let graph = EnvironmentGraph::new(pages, edges).expect("synthetic graph is consistent");
    (graph, tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_paths_replay() {
        let sb = starbucks();
        let mut page = sb.task.start_page.clone();
        for a in &sb.task.golden_actions {
            page = sb.graph.step_actual(&page, a).unwrap().next_page.page_id;
        }
        assert_eq!(page, "P11");
        assert_eq!(sb.graph.page("P6").unwrap().action_space.len(), 16);
        assert_eq!(sb.chain().get(&sb.task.task_id).unwrap().pages.len(), 12);

        let (g, t) = ladder(10, 3);
        let mut page = t.start_page.clone();
        for a in &t.golden_actions {
            page = g.step_actual(&page, a).unwrap().next_page.page_id;
        }
        assert_eq!(page, "L10");
    }

    #[test]
    fn suite_is_seeded() {
        let (g1, t1) = synthetic_suite(5, 1);
        let (g2, t2) = synthetic_suite(5, 1);
        assert_eq!(t1, t2);
        assert_eq!(g1.page_count(), g2.page_count());
        for t in &t1 {
            let mut page = t.start_page.clone();
            for a in &t.golden_actions {
                page = g1.step_actual(&page, a).unwrap().next_page.page_id;
            }
            assert_eq!(Some(page), t.golden_final_class);
        }
    }
}
