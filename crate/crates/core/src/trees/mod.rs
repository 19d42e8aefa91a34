//! CART trees, random forests and stratified evaluation.

mod cart;
mod cv;
mod forest;

pub use cart::{gini, tree_fit, DecisionTree, MaxFeatures, Node, TreeParams};
pub use cv::*;
pub use forest::{forest_fit, predict, predict_proba, ForestParams, RandomForestModel};
