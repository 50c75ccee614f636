# LangGraph graph definitions for the training iteration
